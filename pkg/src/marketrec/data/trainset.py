"""Training sets in a compact index space, plus negative sampling.

A :class:`TrainSet` renumbers the users, items and markets it touches to
``0..n-1`` so model tables only cover what the run needs.  The
:class:`IndexMap` converts global registry ids (and evaluation records)
into that space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .registry import Interaction
from .split import EvalRecord, SplitDataset

TRAIN_NEGATIVES = 4


@dataclass(frozen=True)
class IndexMap:
    users: np.ndarray
    items: np.ndarray
    markets: np.ndarray

    @staticmethod
    def _encode(table: np.ndarray, ids, what: str) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(table, ids)
        pos = np.minimum(pos, len(table) - 1)
        if ids.size and (len(table) == 0 or np.any(table[pos] != ids)):
            raise KeyError(f"{what} id not covered by this index map")
        return pos.astype(np.int64)

    def encode_users(self, ids) -> np.ndarray:
        return self._encode(self.users, ids, "user")

    def encode_items(self, ids) -> np.ndarray:
        return self._encode(self.items, ids, "item")

    def encode_markets(self, ids) -> np.ndarray:
        return self._encode(self.markets, ids, "market")

    def encode_records(self, records: Sequence[EvalRecord], market: int):
        """``(users, candidates, markets)`` with the positive in column 0.

        Records with fewer negatives are right-padded with -1.
        """
        width = max((len(r.candidates) for r in records), default=1)
        cand = np.full((len(records), width), -1, dtype=np.int64)
        for row, r in enumerate(records):
            c = self.encode_items(r.candidates)
            cand[row, : len(c)] = c
        users = self.encode_users([r.user for r in records])
        markets = np.full(len(records), self.encode_markets([market])[0], dtype=np.int64)
        return users, cand, markets

    def arrays(self) -> dict[str, np.ndarray]:
        return {"users": self.users, "items": self.items, "markets": self.markets}

    @classmethod
    def from_arrays(cls, d: Mapping[str, np.ndarray]) -> "IndexMap":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("users", "items", "markets")))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in self.arrays().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


@dataclass
class TrainSet:
    users: np.ndarray
    items: np.ndarray
    markets: np.ndarray
    index: IndexMap
    pools: dict[int, np.ndarray]

    def __len__(self) -> int:
        return len(self.users)

    @property
    def n_users(self) -> int:
        return len(self.index.users)

    @property
    def n_items(self) -> int:
        return len(self.index.items)

    @property
    def n_markets(self) -> int:
        return len(self.index.markets)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.index.fingerprint().encode())
        for a in (self.users, self.items, self.markets):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def subset_market(self, market: int) -> "TrainSet":
        """Rows of one local market, keeping the full index space."""
        keep = self.markets == market
        return TrainSet(self.users[keep], self.items[keep], self.markets[keep], self.index, self.pools)

    def market_sizes(self) -> dict[int, int]:
        return {int(m): int(n) for m, n in zip(*np.unique(self.markets, return_counts=True))}


class NegativeSampler:
    """Uniform negatives from each user's market pool, excluding train positives."""

    def __init__(self, data: TrainSet):
        self.n_items = data.n_items
        self.pools = data.pools
        self.pos_keys = np.unique(data.users.astype(np.int64) * self.n_items + data.items)
        n_pos = np.bincount(data.users, minlength=data.n_users)
        for m, pool in self.pools.items():
            users_m = np.unique(data.users[data.markets == m])
            if users_m.size and n_pos[users_m].max() >= len(pool):
                raise ValueError(f"market {m}: a user has no negative items left in the pool")

    def sample(self, users: np.ndarray, markets: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        out = np.empty((len(users), k), dtype=np.int64)
        for m in np.unique(markets):
            rows = np.flatnonzero(markets == m)
            pool = self.pools[int(m)]
            draw = pool[rng.integers(0, len(pool), size=(len(rows), k))]
            u = users[rows][:, None]
            bad = np.isin(u * self.n_items + draw, self.pos_keys)
            while bad.any():
                draw[bad] = pool[rng.integers(0, len(pool), size=int(bad.sum()))]
                bad = np.isin(u * self.n_items + draw, self.pos_keys)
            out[rows] = draw
        return out


def sample_train_negatives(
    sampler: NegativeSampler, users, markets, rng: np.random.Generator, k: int = TRAIN_NEGATIVES
) -> np.ndarray:
    """``k`` negatives per positive row, shape ``(len(users), k)``."""
    return sampler.sample(np.asarray(users), np.asarray(markets), k, rng)


def downsample_source(source_train: Sequence[Interaction], target_size: int, seed: int) -> list[Interaction]:
    """Uniform sample without replacement of ``min(len(source), target_size)`` rows."""
    n = len(source_train)
    if n <= target_size:
        return list(source_train)
    rng = np.random.default_rng([int(seed), 7])
    keep = np.sort(rng.choice(n, size=target_size, replace=False))
    return [source_train[i] for i in keep]


def build_trainset(splits: Sequence[SplitDataset], train_rows: Sequence[Sequence[Interaction]]) -> TrainSet:
    """Assemble a TrainSet over ``splits`` using the given train rows per split."""
    user_sets = [s.users | {r.user for r in s.test} | {r.user for r in s.validation} for s in splits]
    for a in range(len(user_sets)):
        for b in range(a + 1, len(user_sets)):
            if user_sets[a] & user_sets[b]:
                raise ValueError("user ids overlap across markets")
    users_g = np.array(sorted(set().union(*user_sets)), dtype=np.int64)
    items_g = np.unique(np.concatenate([s.pool for s in splits])) if splits else np.zeros(0, np.int64)
    markets_g = np.array(sorted(s.market for s in splits), dtype=np.int64)
    index = IndexMap(users_g, items_g.astype(np.int64), markets_g)

    rows = [x for part in train_rows for x in part]
    if not rows:
        raise ValueError("empty training set")
    users = index.encode_users([x.user for x in rows])
    items = index.encode_items([x.item for x in rows])
    markets = index.encode_markets([x.market for x in rows])
    pools = {int(index.encode_markets([s.market])[0]): index.encode_items(s.pool) for s in splits}
    return TrainSet(users, items, markets, index, pools)


def make_single(split: SplitDataset) -> TrainSet:
    return build_trainset([split], [split.train])


def make_pairwise(target: SplitDataset, source: SplitDataset, seed: int) -> TrainSet:
    """Target train rows plus source train rows downsampled to the target size."""
    if target.market == source.market:
        raise ValueError("source and target market must differ")
    src = downsample_source(source.train, len(target.train), seed)
    return build_trainset([target, source], [target.train, src])


def make_global(splits: Sequence[SplitDataset]) -> TrainSet:
    """Concatenation of every market's train rows, no downsampling."""
    return build_trainset(list(splits), [s.train for s in splits])
