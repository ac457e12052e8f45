"""Experiment matrix orchestration, result tables and the command line."""

from .config import (
    ALL_METHODS,
    CROSS_METHODS,
    SINGLE_METHODS,
    ConfigError,
    ExperimentConfig,
    build_config,
    config_from_dict,
    derive_seed,
    seed_key,
    load_config,
    with_prerequisites,
)
from .runner import (
    BenchmarkOutcome,
    CellResult,
    CellSpec,
    ExperimentError,
    PipelineError,
    Prepared,
    build_cell_data,
    prepare,
    rerun_cell,
    run_benchmark,
    run_cell,
    run_cells,
    run_global,
    run_pairwise,
    time_pipeline,
    train_method,
)
from .tables import Cell, ResultsTable, emit_results, load_table

__all__ = [
    "ALL_METHODS",
    "BenchmarkOutcome",
    "CROSS_METHODS",
    "Cell",
    "CellResult",
    "CellSpec",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentError",
    "PipelineError",
    "Prepared",
    "ResultsTable",
    "SINGLE_METHODS",
    "build_cell_data",
    "build_config",
    "config_from_dict",
    "derive_seed",
    "seed_key",
    "emit_results",
    "load_config",
    "load_table",
    "prepare",
    "rerun_cell",
    "run_benchmark",
    "run_cell",
    "run_cells",
    "run_global",
    "run_pairwise",
    "time_pipeline",
    "train_method",
    "with_prerequisites",
]
