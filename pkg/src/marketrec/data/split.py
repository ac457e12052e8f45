"""Leave-one-out splits and fixed evaluation negatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .registry import Interaction

EVAL_NEGATIVES = 99
MIN_EVAL_HISTORY = 3

# independent random streams per purpose
_ORDER_STREAM = 1
_VAL_STREAM = 2
_TEST_STREAM = 3


@dataclass(frozen=True)
class EvalRecord:
    user: int
    item: int
    negatives: tuple[int, ...]

    @property
    def candidates(self) -> tuple[int, ...]:
        return (self.item,) + self.negatives

    def to_json(self) -> list:
        return [self.user, self.item, list(self.negatives)]

    @classmethod
    def from_json(cls, row) -> "EvalRecord":
        return cls(int(row[0]), int(row[1]), tuple(int(i) for i in row[2]))


@dataclass
class SplitDataset:
    market: int
    train: list[Interaction]
    validation: list[EvalRecord]
    test: list[EvalRecord]
    seed: int
    pool: np.ndarray
    shortfall: dict[int, int] = field(default_factory=dict)

    def eval_records(self, split: str) -> list[EvalRecord]:
        if split in ("val", "validation"):
            return self.validation
        if split == "test":
            return self.test
        raise ValueError(f"unknown split {split!r}")

    @property
    def users(self) -> set[int]:
        return {x.user for x in self.train}


def _user_rng(seed: int, stream: int, user: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, int(user)])


def sample_eval_negatives(
    user: int,
    pool: np.ndarray,
    positives: set[int] | Sequence[int],
    k: int = EVAL_NEGATIVES,
    seed: int = 0,
    stream: int = _TEST_STREAM,
) -> list[int]:
    """``k`` distinct pool items the user never interacted with.

    Fixed per ``(user, seed, stream)``.  Returns fewer than ``k`` items when
    the pool is too small.
    """
    pos = np.fromiter(set(positives), dtype=np.int64)
    candidates = np.setdiff1d(np.asarray(pool, dtype=np.int64), pos)
    if len(candidates) <= k:
        return [int(i) for i in candidates]
    rng = _user_rng(seed, stream, user)
    return [int(i) for i in rng.choice(candidates, size=k, replace=False)]


def _ordered_history(user: int, rows: list[Interaction], seed: int) -> list[Interaction]:
    # seeded shuffle first so the stable sort breaks timestamp ties randomly;
    # rows without a timestamp sort before all timestamped rows
    rng = _user_rng(seed, _ORDER_STREAM, user)
    rows = [rows[i] for i in rng.permutation(len(rows))]
    return sorted(rows, key=lambda x: (x.timestamp is not None, x.timestamp or 0))


def leave_one_out_split(
    interactions: Sequence[Interaction],
    seed: int = 0,
    pool: np.ndarray | None = None,
    n_negatives: int = EVAL_NEGATIVES,
) -> SplitDataset:
    """Split one market: latest event to test, second latest to validation.

    Users with fewer than three interactions keep everything in train and
    are not evaluated.
    """
    markets = {x.market for x in interactions}
    if len(markets) > 1:
        raise ValueError("leave_one_out_split expects a single market")
    market = markets.pop() if markets else -1
    if pool is None:
        pool = np.array(sorted({x.item for x in interactions}), dtype=np.int64)

    per_user: dict[int, list[Interaction]] = {}
    for x in interactions:
        per_user.setdefault(x.user, []).append(x)

    train: list[Interaction] = []
    val: list[EvalRecord] = []
    test: list[EvalRecord] = []
    shortfall: dict[int, int] = {}
    for user in sorted(per_user):
        rows = per_user[user]
        if len(rows) < MIN_EVAL_HISTORY:
            train.extend(rows)
            continue
        hist = _ordered_history(user, rows, seed)
        train.extend(hist[:-2])
        positives = {x.item for x in rows}
        for rec_list, held, stream in ((val, hist[-2], _VAL_STREAM), (test, hist[-1], _TEST_STREAM)):
            negs = sample_eval_negatives(user, pool, positives, n_negatives, seed, stream)
            if len(negs) < n_negatives:
                shortfall[user] = n_negatives - len(negs)
            rec_list.append(EvalRecord(user, held.item, tuple(negs)))
    return SplitDataset(market, train, val, test, seed, np.asarray(pool, dtype=np.int64), shortfall)


def split_markets(
    interactions: Sequence[Interaction], registry, seed: int = 0, n_negatives: int = EVAL_NEGATIVES
) -> dict[str, SplitDataset]:
    """Leave-one-out split of every market present, keyed by market code."""
    from .registry import by_market

    out = {}
    for m, rows in sorted(by_market(interactions).items()):
        out[registry.market_code(m)] = leave_one_out_split(rows, seed, registry.pool(m), n_negatives)
    return out
