"""Ingestion, leave-one-out splits, negative sampling and train-set assembly."""

from .io import DataFormatError, load_interactions, load_split, save_split, split_manifest_name, write_interactions
from .registry import (
    XMARKET_CODES,
    XMARKET_ELECTRONICS_COUNTS,
    Interaction,
    MarketRegistry,
    RegistryError,
    by_market,
    interactions_fingerprint,
)
from .split import (
    EVAL_NEGATIVES,
    EvalRecord,
    SplitDataset,
    leave_one_out_split,
    sample_eval_negatives,
    split_markets,
)
from .synthetic import SyntheticSpec, generate_synthetic_markets
from .trainset import (
    TRAIN_NEGATIVES,
    IndexMap,
    NegativeSampler,
    TrainSet,
    build_trainset,
    downsample_source,
    make_global,
    make_pairwise,
    make_single,
    sample_train_negatives,
)

__all__ = [
    "DataFormatError",
    "EVAL_NEGATIVES",
    "EvalRecord",
    "IndexMap",
    "Interaction",
    "MarketRegistry",
    "NegativeSampler",
    "RegistryError",
    "SplitDataset",
    "SyntheticSpec",
    "TRAIN_NEGATIVES",
    "TrainSet",
    "XMARKET_CODES",
    "XMARKET_ELECTRONICS_COUNTS",
    "build_trainset",
    "by_market",
    "downsample_source",
    "generate_synthetic_markets",
    "interactions_fingerprint",
    "leave_one_out_split",
    "load_interactions",
    "load_split",
    "make_global",
    "make_pairwise",
    "make_single",
    "sample_eval_negatives",
    "sample_train_negatives",
    "save_split",
    "split_manifest_name",
    "split_markets",
    "write_interactions",
]
