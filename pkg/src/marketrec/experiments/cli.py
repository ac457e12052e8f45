"""``marketrec`` command line.

Settings come from (lowest to highest precedence) built-in defaults, the
``--config`` file, ``--set key=value`` overrides and the dedicated flags.
Exit status is 0 only when every requested cell completed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import save_split, split_manifest_name, write_interactions
from ..evaluation import EvalReport, compare, evaluate, save_significance
from ..models import load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, method_key, parse_overrides, read_config_file
from .runner import (
    CellSpec,
    ExperimentError,
    load_dataset,
    prepare,
    run_benchmark,
    run_cells,
    run_global,
    run_pairwise,
)
from .tables import emit_results, load_table

log = logging.getLogger("marketrec")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir")
    g.add_argument("--dataset", help="interaction TSV; omit for synthetic data")
    g.add_argument("--markets", help="comma-separated market codes (targets for experiment commands)")
    g.add_argument("--methods", help="comma-separated method labels, e.g. GMF++,MA-GMF++")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="marketrec", description="Market-aware recommendation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load, split and sample evaluation negatives")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic multi-market interaction file")
    _common(p)
    p.add_argument("--users", type=int, help="users per market")
    p.add_argument("--items", type=int, help="items per market")
    p.add_argument("--per-user", type=int, help="interactions per user")
    p.add_argument("--divergence", type=float)
    p.add_argument("--overlap", type=float)

    p = sub.add_parser("train", help="train and evaluate one cell")
    _common(p)
    p.add_argument("--setting", choices=("single", "pairwise", "global"), default="pairwise")
    p.add_argument("--target", required=False)
    p.add_argument("--source", help="source market (pairwise) or comma list (global)")

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--market", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")

    for name, helptext in (
        ("pairwise", "AVG and BST tables over target-source pairs"),
        ("global", "one model over all markets"),
        ("benchmark", "training-time comparison"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--sources", help="comma-separated source markets")
        p.add_argument("--workers", type=int)
        p.add_argument("--repeats", type=int)

    p = sub.add_parser("report", help="re-emit a saved results table")
    _common(p)
    p.add_argument("--table", required=True, help="table JSON")
    p.add_argument("--format", default="csv,json,txt")

    p = sub.add_parser("significance", help="paired t-test between two per-user reports")
    _common(p)
    p.add_argument("--a", required=True, help="report CSV of model A")
    p.add_argument("--b", required=True, help="report CSV of model B")
    p.add_argument("--m", type=int, default=1, help="Bonferroni factor")
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    values.update(parse_overrides(args.set))
    flags = {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "dataset": args.dataset,
        "methods": args.methods,
        "sources": getattr(args, "sources", None),
        "workers": getattr(args, "workers", None),
        "repeats": getattr(args, "repeats", None),
        "synthetic.users_per_market": getattr(args, "users", None),
        "synthetic.items_per_market": getattr(args, "items", None),
        "synthetic.interactions_per_user": getattr(args, "per_user", None),
        "synthetic.divergence": getattr(args, "divergence", None),
        "synthetic.overlap": getattr(args, "overlap", None),
    }
    if args.markets:
        if args.command == "synth":
            flags["synthetic.markets"] = args.markets
        elif args.command in ("pairwise", "global", "benchmark"):
            flags["targets"] = args.markets
        else:
            flags["markets"] = args.markets
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    return load_config(None, values)


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    interactions, registry = load_dataset(cfg)
    path = write_interactions(Path(cfg.out_dir) / "interactions.tsv", interactions, registry)
    print(f"{len(interactions)} interactions -> {path}")
    return 0


def cmd_prepare(cfg: ExperimentConfig, args) -> int:
    prep = prepare(cfg)
    out = Path(cfg.out_dir) / "prepared"
    out.mkdir(parents=True, exist_ok=True)
    (out / "registry.json").write_text(json.dumps(prep.registry.to_json()))
    for code, split in prep.splits.items():
        save_split(split, out / split_manifest_name(code, prep.fingerprint, prep.seed), prep.fingerprint)
        print(f"{code}: {len(split.train)} train rows, {len(split.test)} evaluated users, pool {len(split.pool)}")
    print(f"dataset {prep.fingerprint} seed {prep.seed} -> {out}")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    prep = prepare(cfg)
    target = args.target
    if args.setting == "global":
        sources = tuple(args.source.split(",")) if args.source else tuple(sorted(prep.splits))
        evals = (target,) if target else sources
        spec_target = None
    else:
        if not target:
            raise ConfigError("--target is required for this setting")
        if args.setting == "pairwise":
            if not args.source:
                raise ConfigError("--source is required for the pairwise setting")
            sources = (args.source,)
        else:
            sources = (target,)
        evals, spec_target = (target,), target
    labels = cfg.methods
    keys = tuple(dict.fromkeys(method_key(m) for m in labels))
    spec = CellSpec(args.setting, spec_target, sources, evals, keys)
    (result,) = run_cells(prep, [spec], cfg, Path(cfg.out_dir) / "train", "train")
    for (label, market, split), rep in sorted(result.reports.items()):
        if split == "test":
            print(f"{label:10s} {market}  nDCG@10 {rep.mean_ndcg:.4f}  HR@10 {rep.mean_hr:.4f}")
    print(f"manifest: {result.manifest}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    model, index = load_checkpoint(args.checkpoint)
    if index is None:
        raise ConfigError("checkpoint carries no ID map")
    prep = prepare(cfg)
    gid = prep.registry.market_id(args.market)
    rep = evaluate(model, prep.split(args.market).eval_records(args.split), index, gid, args.market, args.split)
    path, _ = rep.save(Path(cfg.out_dir) / "eval" / f"{model.name}_{args.market}_{args.split}.csv")
    print(json.dumps(rep.summary()))
    print(f"report: {path}")
    return 0


def cmd_pairwise(cfg: ExperimentConfig, args) -> int:
    out = run_pairwise(cfg)
    print(out.avg.render())
    print(out.bst.render())
    return 0


def cmd_global(cfg: ExperimentConfig, args) -> int:
    out = run_global(cfg)
    print(out.table.render())
    return 0


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    out = run_benchmark(cfg)
    for r in out.rows:
        print(f"{r['method']:10s} {r['target']}  {r['seconds']:.3f}s over {r['sources']} sources")
    print(f"csv: {out.csv}\ngnuplot: {out.script}")
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    table = load_table(args.table)
    table.mark_best()
    for p in emit_results(table, cfg.out_dir, Path(args.table).stem, args.format):
        print(p)
    print(table.render())
    return 0


def cmd_significance(cfg: ExperimentConfig, args) -> int:
    res = compare(EvalReport.load(args.a), EvalReport.load(args.b), args.m)
    path = save_significance([res], Path(cfg.out_dir) / "significance.csv")
    verdict = "significant" if res.significant else "not significant"
    print(f"{res.model_a} vs {res.model_b} on {res.market}: t={res.t:.4f} p={res.p:.4g} ({verdict} at 0.05/{res.m})")
    print(path)
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "pairwise": cmd_pairwise,
    "global": cmd_global,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
    "significance": cmd_significance,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.manifest:
            print(f"completed cells are listed in {exc.manifest}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
