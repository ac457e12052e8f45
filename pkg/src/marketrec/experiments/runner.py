"""Experiment matrix: data preparation, per-cell training and result tables.

A *cell* is one training dataset (single market, a target-source pair, or
all markets at once) together with every method trained on it.  Each cell
writes a manifest naming the dataset fingerprint, seeds, config and
checkpoints, so tables can always be traced back to the runs behind them.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..data import (
    SplitDataset,
    TrainSet,
    generate_synthetic_markets,
    interactions_fingerprint,
    load_interactions,
    make_global,
    make_pairwise,
    make_single,
    split_markets,
)
from ..data.synthetic import SyntheticSpec
from ..evaluation import (
    EvalReport,
    SignificanceResult,
    aggregate_avg,
    compare,
    evaluate,
    save_significance,
    select_best_source,
)
from ..models import Model, ModelConfig, save_checkpoint, split_market_tables, warm_start_nmf
from ..training import RunRecord, forec_adapt, train, train_maml
from .config import (
    CROSS_METHODS,
    SINGLE_METHODS,
    ExperimentConfig,
    derive_seed,
    method_key,
    seed_key,
    with_prerequisites,
)
from .tables import Cell, ResultsTable, emit_results, marker_string

log = logging.getLogger(__name__)

M_AVG, M_BST, M_GLOBAL = 9, 12, 9
MANIFEST_VERSION = 1


class ExperimentError(RuntimeError):
    """A cell failed; ``manifest`` lists what completed before it."""

    def __init__(self, msg: str, manifest: Path | None = None):
        super().__init__(msg)
        self.manifest = manifest


class PipelineError(RuntimeError):
    pass


# -- data --------------------------------------------------------------------


@dataclass
class Prepared:
    registry: object
    splits: dict[str, SplitDataset]
    fingerprint: str
    seed: int
    n_interactions: int

    def split(self, code: str) -> SplitDataset:
        try:
            return self.splits[code]
        except KeyError:
            raise ExperimentError(f"market {code!r} has no interactions in this dataset") from None


def load_dataset(config: ExperimentConfig):
    if config.dataset:
        return load_interactions(config.dataset, base_market=config.base_market, markets=config.markets)
    spec = config.synthetic or SyntheticSpec()
    return generate_synthetic_markets(spec, seed=config.seed)


def prepare(config: ExperimentConfig) -> Prepared:
    """Load (or synthesise) interactions and split every market once."""
    interactions, registry = load_dataset(config)
    splits = split_markets(interactions, registry, seed=config.seed)
    return Prepared(registry, splits, interactions_fingerprint(interactions), config.seed, len(interactions))


def default_targets(config: ExperimentConfig, prep: Prepared) -> list[str]:
    if config.targets:
        return list(config.targets)
    present = [m for m in config.markets if m in prep.splits]
    # "us" only ever serves as a source in the published setup
    return [m for m in present if m != "us"] or present


def default_sources(config: ExperimentConfig, prep: Prepared) -> list[str]:
    if config.sources:
        return list(config.sources)
    return [m for m in config.markets if m in prep.splits]


# -- cells -------------------------------------------------------------------


@dataclass(frozen=True)
class CellSpec:
    setting: str  # single | pairwise | global
    target: str | None
    sources: tuple[str, ...]
    eval_markets: tuple[str, ...]
    methods: tuple[str, ...]  # internal keys

    @property
    def key(self) -> str:
        if self.setting == "single":
            return f"single/{self.target}"
        if self.setting == "pairwise":
            return f"pairwise/{self.target}__{self.sources[0]}"
        return "global/" + "_".join(self.eval_markets)

    def label(self, method: str) -> str:
        if self.setting == "single" or method in ("MAML", "FOREC"):
            return method
        return method + "++"

    def seed_parts(self) -> tuple[str, str]:
        if self.setting == "global":
            return ("global", "+".join(self.sources))
        return (self.target or "-", self.sources[0] if self.sources else "-")


@dataclass
class CellResult:
    spec: CellSpec
    reports: dict[tuple[str, str, str], EvalReport] = field(default_factory=dict)
    runs: dict[str, RunRecord] = field(default_factory=dict)
    manifest: Path | None = None

    def report(self, label: str, market: str, split: str = "test") -> EvalReport:
        return self.reports[(label, market, split)]


def _config_digest(config: ExperimentConfig) -> str:
    d = config.to_dict()
    for k in ("out_dir", "workers", "resume", "repeats", "targets", "sources", "methods"):
        d.pop(k, None)
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def build_cell_data(prep: Prepared, spec: CellSpec, config: ExperimentConfig) -> TrainSet:
    if spec.setting == "single":
        return make_single(prep.split(spec.target))
    if spec.setting == "pairwise":
        seed = derive_seed(config.seed, spec.target, spec.sources[0], "downsample")
        return make_pairwise(prep.split(spec.target), prep.split(spec.sources[0]), seed)
    return make_global([prep.split(m) for m in spec.sources])


def _model_config(kind: str, aware: bool, data: TrainSet) -> ModelConfig:
    return ModelConfig(kind=kind, market_aware=aware, n_users=data.n_users, n_items=data.n_items, n_markets=data.n_markets)


def train_method(
    method: str,
    data: TrainSet,
    trained: dict[str, Model],
    config: ExperimentConfig,
    seed: int,
    label: str,
    target_local: int | None = None,
) -> tuple[Model, RunRecord]:
    """Train one method, enforcing the warm-start / meta-learning order."""
    tcfg = replace(config.train, seed=seed)
    aware = method.startswith("MA-")
    base = method_key(method)[3:] if aware else method_key(method)
    if base in ("GMF", "MLP"):
        model = Model(_model_config(base.lower(), aware, data), seed=seed)
        return train(model, data, tcfg, name=label)
    if base == "NMF":
        g, m = ("MA-GMF", "MA-MLP") if aware else ("GMF", "MLP")
        if g not in trained or m not in trained:
            raise PipelineError(f"{label} needs trained {g} and {m} donors")
        model = warm_start_nmf(trained[g], trained[m], config.nmf_alpha)
        if aware and config.split_market_tables:
            model = split_market_tables(model)
        return train(model, data, tcfg, name=label)
    if base == "MAML":
        if "NMF" not in trained:
            raise PipelineError("MAML needs a trained NMF model")
        return train_maml(trained["NMF"], data, replace(config.maml, seed=seed))
    if base == "FOREC":
        if "MAML" not in trained:
            raise PipelineError("FOREC needs a trained MAML model")
        if target_local is None:
            raise PipelineError("FOREC needs a target market")
        return forec_adapt(trained["MAML"], data.subset_market(target_local), config.freeze_mask, tcfg)
    raise ValueError(f"unknown method {method!r}")


def _local_market(prep: Prepared, data: TrainSet, code: str) -> int:
    return int(data.index.encode_markets([prep.registry.market_id(code)])[0])


def _evaluate_into(result: CellResult, model: Model, label: str, prep, data, code: str, out: Path) -> list[dict]:
    entries = []
    gid = prep.registry.market_id(code)
    for split in ("val", "test"):
        rep = evaluate(model, prep.split(code).eval_records(split), data.index, gid, code, split, label)
        result.reports[(label, code, split)] = rep
        path, _ = rep.save(out / f"{code}_{split}.csv")
        entries.append({"method": label, "market": code, "split": split, "report": str(path)})
    return entries


def _load_cell(spec: CellSpec, manifest: dict, path: Path) -> CellResult:
    result = CellResult(spec, manifest=path)
    for e in manifest["entries"]:
        result.reports[(e["method"], e["market"], e["split"])] = EvalReport.load(e["report"])
    for label, run in manifest["runs"].items():
        result.runs[label] = RunRecord.load(run["record"])
    return result


def run_cell(prep: Prepared, spec: CellSpec, config: ExperimentConfig, root) -> CellResult:
    """Train and evaluate every method of one cell, persisting as it goes."""
    cell_dir = Path(root) / "cells" / spec.key
    manifest_path = cell_dir / "manifest.json"
    digest = _config_digest(config)
    if config.resume and manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if (
            old.get("status") == "complete"
            and old.get("dataset") == prep.fingerprint
            and old.get("config_digest") == digest
            and set(spec.methods) <= set(old.get("methods", []))
        ):
            log.info("resuming %s from %s", spec.key, manifest_path)
            return _load_cell(spec, old, manifest_path)

    data = build_cell_data(prep, spec, config)
    result = CellResult(spec, manifest=manifest_path)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "cell": spec.key,
        "setting": spec.setting,
        "target": spec.target,
        "sources": list(spec.sources),
        "eval_markets": list(spec.eval_markets),
        "methods": list(with_prerequisites(spec.methods)),
        "dataset": prep.fingerprint,
        "split_seed": prep.seed,
        "train_fingerprint": data.fingerprint(),
        "config_digest": digest,
        "config": config.to_dict(),
        "runs": {},
        "entries": [],
        "status": "running",
    }
    trained: dict[str, Model] = {}
    try:
        for method in with_prerequisites(spec.methods):
            seed = derive_seed(config.seed, *spec.seed_parts(), seed_key(method))
            label = spec.label(method)
            if method == "FOREC":
                for code in spec.eval_markets:
                    lab = f"FOREC@{code}"
                    model, rec = train_method(
                        method, data, trained, config, seed, label, _local_market(prep, data, code)
                    )
                    out = cell_dir / "FOREC" / code
                    result.runs[lab] = rec
                    manifest["runs"][lab] = {
                        "seed": seed,
                        "record": str(rec.save(out / "run.json")),
                        "checkpoint": str(save_checkpoint(model, out / "model.npz", data.index)),
                    }
                    manifest["entries"] += _evaluate_into(result, model, label, prep, data, code, out)
                continue
            model, rec = train_method(method, data, trained, config, seed, label)
            trained[method] = model
            out = cell_dir / label
            result.runs[label] = rec
            manifest["runs"][label] = {
                "seed": seed,
                "record": str(rec.save(out / "run.json")),
                "checkpoint": str(save_checkpoint(model, out / "model.npz", data.index)),
            }
            for code in spec.eval_markets:
                manifest["entries"] += _evaluate_into(result, model, label, prep, data, code, out)
            log.info("%s %s done in %.2fs", spec.key, label, rec.seconds)
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        _write_json(manifest_path, manifest)
        raise
    manifest["status"] = "complete"
    _write_json(manifest_path, manifest)
    return result


def rerun_cell(manifest_path) -> CellResult:
    """Re-execute a cell from its manifest alone (into a fresh directory)."""
    from .config import config_from_dict

    doc = json.loads(Path(manifest_path).read_text())
    config = config_from_dict(doc["config"])
    config.resume = False
    prep = prepare(config)
    if prep.fingerprint != doc["dataset"]:
        raise ExperimentError("dataset does not match the manifest fingerprint")
    spec = CellSpec(
        doc["setting"], doc["target"], tuple(doc["sources"]), tuple(doc["eval_markets"]), tuple(doc["methods"])
    )
    return run_cell(prep, spec, config, Path(manifest_path).parent / "rerun")


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=1, default=str))
    tmp.replace(path)
    return path


def _cell_job(args):
    prep, spec, config, root = args
    return run_cell(prep, spec, config, root)


def run_cells(prep: Prepared, specs: list[CellSpec], config: ExperimentConfig, root, name: str) -> list[CellResult]:
    """Run cells (optionally in worker processes); abort on the first failure.

    The run manifest lists completed cells and the failure, if any.
    """
    root = Path(root)
    run_manifest = root / f"{name}_manifest.json"
    done: list[CellResult] = []
    doc = {"dataset": prep.fingerprint, "seed": config.seed, "cells": [s.key for s in specs], "completed": []}
    try:
        if config.workers > 1 and len(specs) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for r in pool.map(_cell_job, [(prep, s, config, root) for s in specs]):
                    done.append(r)
                    doc["completed"].append({"cell": r.spec.key, "manifest": str(r.manifest)})
        else:
            for s in specs:
                r = run_cell(prep, s, config, root)
                done.append(r)
                doc["completed"].append({"cell": s.key, "manifest": str(r.manifest)})
    except Exception as exc:
        finished = {d["cell"] for d in doc["completed"]}
        doc["failed"] = next((s.key for s in specs if s.key not in finished), None)
        doc["error"] = f"{type(exc).__name__}: {exc}"
        doc["status"] = "aborted"
        _write_json(run_manifest, doc)
        raise ExperimentError(f"{name} aborted: {doc['error']}", run_manifest) from exc
    doc["status"] = "complete"
    _write_json(run_manifest, doc)
    return done


# -- tables ------------------------------------------------------------------

# MA label -> (unaware label, single-market label)
MA_PAIRS = {"MA-GMF++": ("GMF++", "GMF"), "MA-MLP++": ("MLP++", "MLP"), "MA-NMF++": ("NMF++", "NMF")}


def _significance(
    reports: dict[str, EvalReport], m: int, with_single: bool
) -> tuple[dict[str, str], list[SignificanceResult]]:
    """Marker strings for each MA row and every comparison made."""
    markers, tests = {}, []
    for ma, (unaware, single) in MA_PAIRS.items():
        if ma not in reports:
            continue
        flags = {}
        others = {"unaware": unaware, "MAML": "MAML", "FOREC": "FOREC"}
        if with_single:
            others["single"] = single
        for key, other in others.items():
            if other in reports:
                res = compare(reports[ma], reports[other], m)
                tests.append(res)
                flags[key] = res.a_better
        markers[ma] = marker_string(flags)
    return markers, tests


def _fill(table: ResultsTable, market: str, reports: dict[str, EvalReport], prov: dict, sources: dict, m, single):
    markers, tests = _significance(reports, m, single)
    for label, rep in reports.items():
        table[(label, market)] = Cell(
            rep.mean_ndcg, rep.mean_hr, markers.get(label, ""), source=sources.get(label), provenance=prov[label]
        )
    return tests


def _row_order(labels) -> list[str]:
    order = list(SINGLE_METHODS) + list(CROSS_METHODS)
    return [x for x in order if x in labels]


@dataclass
class PairwiseOutcome:
    avg: ResultsTable
    bst: ResultsTable
    significance: list[SignificanceResult]
    cells: list[CellResult]


def _labels(config: ExperimentConfig, setting: str) -> list[str]:
    if setting == "single":
        return [m for m in config.methods if m in SINGLE_METHODS]
    return [m for m in config.methods if m in CROSS_METHODS]


def run_pairwise(config: ExperimentConfig, prep: Prepared | None = None) -> PairwiseOutcome:
    """AVG and BST tables over every (target, source) pair."""
    prep = prep or prepare(config)
    root = Path(config.out_dir) / "pairwise"
    targets = default_targets(config, prep)
    cross = [method_key(m) for m in _labels(config, "pairwise")]
    single = [method_key(m) for m in _labels(config, "single")]
    sources_by_target = {}
    for t in targets:
        srcs = [s for s in default_sources(config, prep) if s != t]
        if not srcs:
            raise ExperimentError(f"no source market for target {t!r}")
        sources_by_target[t] = srcs
    specs = []
    for t in targets:
        if cross:
            specs += [CellSpec("pairwise", t, (s,), (t,), tuple(cross)) for s in sources_by_target[t]]
        if single:
            specs.append(CellSpec("single", t, (t,), (t,), tuple(single)))
    cells = run_cells(prep, specs, config, root, "pairwise")
    by_key = {c.spec.key: c for c in cells}

    cross_labels = _row_order(_labels(config, "pairwise"))
    avg = ResultsTable("AVG: test nDCG@10 averaged over source markets", cross_labels, targets, m=config.significance_m or M_AVG)
    bst = ResultsTable(
        "BST: test nDCG@10 with the validation-selected source",
        _row_order(_labels(config, "single")) + cross_labels,
        targets,
        m=config.significance_m or M_BST,
    )
    tests: list[SignificanceResult] = []
    for t in targets:
        pair_cells = [by_key[f"pairwise/{t}__{s}"] for s in sources_by_target[t]] if cross else []
        avg_reports, avg_prov = {}, {}
        bst_reports, bst_prov, bst_src = {}, {}, {}
        for label in cross_labels:
            per_src = {c.spec.sources[0]: c for c in pair_cells}
            avg_reports[label] = aggregate_avg([c.report(label, t) for c in per_src.values()], label)
            avg_prov[label] = {"dataset": prep.fingerprint, "manifests": [str(c.manifest) for c in per_src.values()]}
            best = select_best_source({s: c.report(label, t, "val") for s, c in per_src.items()})
            bst_reports[label] = per_src[best].report(label, t)
            bst_src[label] = best
            bst_prov[label] = {"dataset": prep.fingerprint, "manifests": [str(per_src[best].manifest)]}
        if single:
            sc = by_key[f"single/{t}"]
            for label in _labels(config, "single"):
                bst_reports[label] = sc.report(label, t)
                bst_prov[label] = {"dataset": prep.fingerprint, "manifests": [str(sc.manifest)]}
        if avg_reports:
            tests += [replace(r, model_a=f"AVG:{r.model_a}") for r in _fill(avg, t, avg_reports, avg_prov, {}, avg.m, False)]
        tests += [replace(r, model_a=f"BST:{r.model_a}") for r in _fill(bst, t, bst_reports, bst_prov, bst_src, bst.m, True)]
    avg.mark_best()
    bst.mark_best()
    emit_results(avg, root, "avg")
    emit_results(bst, root, "bst")
    save_significance(tests, root / "significance.csv")
    return PairwiseOutcome(avg, bst, tests, cells)


@dataclass
class GlobalOutcome:
    table: ResultsTable
    significance: list[SignificanceResult]
    cell: CellResult


def run_global(config: ExperimentConfig, prep: Prepared | None = None) -> GlobalOutcome:
    """One model per method on the concatenation of all markets."""
    prep = prep or prepare(config)
    root = Path(config.out_dir) / "global"
    train_markets = sorted(set(default_sources(config, prep)) | set(config.targets))
    targets = default_targets(config, prep)
    if len(train_markets) < 2:
        log.warning("global setting with a single market is plain single-market training")
    labels = _row_order(_labels(config, "global"))
    spec = CellSpec("global", None, tuple(train_markets), tuple(targets), tuple(method_key(x) for x in labels))
    (cell,) = run_cells(prep, [spec], config, root, "global")
    table = ResultsTable("Global: test nDCG@10, one model over all markets", labels, targets, m=config.significance_m or M_GLOBAL)
    tests = []
    prov = {lab: {"dataset": prep.fingerprint, "manifests": [str(cell.manifest)]} for lab in labels}
    for t in targets:
        tests += _fill(table, t, {lab: cell.report(lab, t) for lab in labels}, prov, {}, table.m, False)
    table.mark_best()
    emit_results(table, root, "global")
    save_significance(tests, root / "significance.csv")
    return GlobalOutcome(table, tests, cell)


# -- timing ------------------------------------------------------------------


@dataclass
class BenchmarkOutcome:
    rows: list[dict]
    csv: Path
    dat: Path
    script: Path

    def seconds(self, method: str, target: str) -> float:
        for r in self.rows:
            if r["method"] == method and r["target"] == target:
                return r["seconds"]
        raise KeyError((method, target))


def time_pipeline(data: TrainSet, config: ExperimentConfig, methods, seeds: dict[str, int], target_local: int, repeats: int = 1):
    """Seconds per method (minimum over ``repeats``), trained in dependency order.

    Repeats are interleaved, one full pass over the methods at a time, so
    slow drift in machine load hits every method alike.  FOREC's figure
    includes its MAML stage; every other method counts only its own stage.
    """
    order = with_prerequisites(methods)
    own: dict[str, float] = {}
    for _ in range(repeats):
        trained: dict[str, Model] = {}
        for m in order:
            model, rec = train_method(m, data, trained, config, seeds[m], m, target_local)
            trained[m] = model
            own[m] = min(own.get(m, rec.seconds), rec.seconds)
    if "FOREC" in own:
        own["FOREC"] += own["MAML"]
    return own


def run_benchmark(config: ExperimentConfig, prep: Prepared | None = None) -> BenchmarkOutcome:
    """Wall-clock per (method, target) summed across source markets."""
    prep = prep or prepare(config)
    root = Path(config.out_dir) / "benchmark"
    root.mkdir(parents=True, exist_ok=True)
    targets = default_targets(config, prep)
    labels = _row_order(_labels(config, "pairwise"))
    keys = [method_key(x) for x in labels]
    totals = {(lab, t): 0.0 for lab in labels for t in targets}
    n_src = {}
    for t in targets:
        srcs = [s for s in default_sources(config, prep) if s != t]
        n_src[t] = len(srcs)
        for s in srcs:
            spec = CellSpec("pairwise", t, (s,), (t,), tuple(keys))
            data = build_cell_data(prep, spec, config)
            seeds = {m: derive_seed(config.seed, t, s, seed_key(m)) for m in with_prerequisites(keys)}
            own = time_pipeline(data, config, keys, seeds, _local_market(prep, data, t), config.repeats)
            for lab, k in zip(labels, keys):
                totals[(lab, t)] += own[k]
            log.info("benchmark %s<-%s %s", t, s, {k: round(v, 3) for k, v in own.items()})
    rows = [
        {"method": lab, "target": t, "seconds": totals[(lab, t)], "sources": n_src[t]}
        for lab in labels
        for t in targets
    ]
    csv_path = root / "timing.csv"
    with open(csv_path, "w") as fh:
        fh.write("method,target,seconds,sources\n")
        for r in rows:
            fh.write(f"{r['method']},{r['target']},{r['seconds']!r},{r['sources']}\n")
    dat, gp = write_gnuplot(rows, labels, targets, root)
    return BenchmarkOutcome(rows, csv_path, dat, gp)


def write_gnuplot(rows, labels, targets, root: Path) -> tuple[Path, Path]:
    cell = {(r["method"], r["target"]): r["seconds"] for r in rows}
    dat = root / "timing.dat"
    lines = ["# seconds per method (rows) and target market (columns), summed over sources", "method " + " ".join(targets)]
    for lab in labels:
        lines.append(f'"{lab}" ' + " ".join(f"{cell[(lab, t)]:.6g}" for t in targets))
    dat.write_text("\n".join(lines) + "\n")
    gp = root / "timing.gp"
    plots = ", ".join(f"'{dat.name}' using {i + 2}:xtic(1) title '{t}'" for i, t in enumerate(targets))
    gp.write_text(
        "# training time across source markets; y axis is log scale\n"
        "set terminal pngcairo size 900,500\n"
        "set output 'timing.png'\n"
        "set style data histogram\n"
        "set style histogram clustered\n"
        "set style fill solid border -1\n"
        "set logscale y\n"
        "set ylabel 'seconds (log scale)'\n"
        "set xtics rotate by -30\n"
        f"plot {plots}\n"
    )
    return dat, gp


__all__ = [
    "BenchmarkOutcome",
    "CellResult",
    "CellSpec",
    "ExperimentError",
    "GlobalOutcome",
    "PairwiseOutcome",
    "PipelineError",
    "Prepared",
    "build_cell_data",
    "prepare",
    "rerun_cell",
    "run_benchmark",
    "run_cell",
    "run_cells",
    "run_global",
    "run_pairwise",
    "time_pipeline",
    "train_method",
]
