import json
import subprocess
import sys

import pytest

from marketrec.experiments.cli import build_parser, main, resolve_config

TINY = [
    "--set", "synthetic.markets=de,jp,in",
    "--set", "synthetic.users_per_market=16",
    "--set", "synthetic.items_per_market=110",
    "--set", "synthetic.interactions_per_user=8",
    "--set", "train.epochs=1",
    "--set", "maml.meta_epochs=1",
]  # fmt: skip


def run(*args):
    return main(list(args))


def test_all_subcommands_exist():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {
        "prepare", "synth", "train", "evaluate", "pairwise", "global", "benchmark", "report", "significance"
    }  # fmt: skip


def test_flag_precedence(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("seed = 1\ntrain.epochs = 3\n")
    args = build_parser().parse_args(
        ["pairwise", "--config", str(cfg_file), "--set", "seed=2", "--seed", "5", "--markets", "de", *TINY]
    )
    cfg = resolve_config(args)
    assert cfg.seed == 5 and cfg.train.epochs == 1 and cfg.targets == ("de",)


def test_synth_then_prepare_from_file(tmp_path, capsys):
    assert run("synth", "--out-dir", str(tmp_path), *TINY) == 0
    tsv = tmp_path / "interactions.tsv"
    assert len(tsv.read_text().splitlines()) == 3 * 16 * 8
    assert run("prepare", "--out-dir", str(tmp_path), "--dataset", str(tsv)) == 0
    prepared = tmp_path / "prepared"
    assert (prepared / "registry.json").exists()
    assert len(list(prepared.glob("split_*.json"))) == 3


def test_train_evaluate_significance(tmp_path, capsys):
    out = str(tmp_path)
    code = run("train", "--out-dir", out, "--setting", "pairwise", "--target", "de", "--source", "jp",
               "--methods", "GMF++,MA-GMF++", *TINY)  # fmt: skip
    assert code == 0
    cell = tmp_path / "train/cells/pairwise/de__jp"
    manifest = json.loads((cell / "manifest.json").read_text())
    ck = manifest["runs"]["MA-GMF++"]["checkpoint"]
    assert run("evaluate", "--out-dir", out, "--checkpoint", ck, "--market", "de", *TINY) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-2])
    stored = json.loads((cell / "MA-GMF++" / "de_test.json").read_text())
    assert summary["ndcg@10"] == stored["ndcg@10"]
    code = run("significance", "--out-dir", out, "--a", str(cell / "MA-GMF++/de_test.csv"),
               "--b", str(cell / "GMF++/de_test.csv"), "--m", "9")  # fmt: skip
    assert code == 0 and (tmp_path / "significance.csv").exists()


def test_pairwise_global_report_benchmark(tmp_path, capsys):
    out = str(tmp_path)
    assert run("pairwise", "--out-dir", out, "--markets", "de", "--sources", "jp", "--methods", "GMF,GMF++", *TINY) == 0
    assert "BST" in capsys.readouterr().out
    assert run("global", "--out-dir", out, "--methods", "GMF++,MA-GMF++", *TINY) == 0
    assert run("report", "--out-dir", str(tmp_path / "r"), "--table", str(tmp_path / "global/global.json"), "--format", "txt") == 0
    assert (tmp_path / "r/global.txt").exists()
    assert run("benchmark", "--out-dir", out, "--markets", "de", "--sources", "jp", "--methods", "GMF++,MA-GMF++", *TINY) == 0
    assert (tmp_path / "benchmark/timing.csv").exists()


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert run("pairwise", "--out-dir", str(tmp_path), "--markets", "zz", *TINY) == 2
    assert run("train", "--out-dir", str(tmp_path), "--setting", "pairwise", "--target", "de", *TINY) == 2
    assert run("report", "--out-dir", str(tmp_path), "--table", str(tmp_path / "missing.json")) == 2
    with pytest.raises(SystemExit):
        run("nonsense")


def test_failed_cell_exit_code(tmp_path, monkeypatch, capsys):
    import marketrec.experiments.runner as runner

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(runner, "train_method", boom)
    assert run("pairwise", "--out-dir", str(tmp_path), "--markets", "de", "--sources", "jp", *TINY) == 1
    assert "completed cells" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "marketrec", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "pairwise" in res.stdout
