"""Leave-one-out ranking evaluation and paired significance tests."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .data.split import EvalRecord
from .data.trainset import IndexMap
from .models import Model

ALPHA = 0.05
CUTOFF = 10


def rank_from_scores(pos_score: float, neg_scores) -> int:
    """1 + number of negatives scoring at least as high as the positive."""
    return 1 + int(np.count_nonzero(np.asarray(neg_scores) >= pos_score))


def rank_positive(model: Model, user: int, positive: int, negatives: Sequence[int], market: int = 0) -> int:
    """Rank of ``positive`` among itself and ``negatives`` (model index space)."""
    items = np.asarray([positive, *negatives])
    if len(set(items.tolist())) != len(items):
        raise ValueError("candidates must be distinct")
    s = model.predict(np.full(len(items), user), items, np.full(len(items), market))
    return rank_from_scores(s[0], s[1:])


def ndcg_at_k(rank, k: int = CUTOFF):
    """nDCG with one relevant item: ``1/log2(rank+1)`` inside the cutoff."""
    r = np.asarray(rank, dtype=np.float64)
    out = np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def hr_at_k(rank, k: int = CUTOFF):
    r = np.asarray(rank)
    out = (r <= k).astype(np.float64)
    return float(out) if out.ndim == 0 else out


@dataclass
class EvalReport:
    model: str
    market: str
    split: str
    users: np.ndarray
    ranks: np.ndarray
    n_candidates: np.ndarray
    hr: np.ndarray
    ndcg: np.ndarray

    @classmethod
    def from_ranks(cls, model, market, split, users, ranks, n_candidates, k: int = CUTOFF) -> "EvalReport":
        users = np.asarray(users, dtype=np.int64)
        order = np.argsort(users, kind="stable")
        ranks = np.asarray(ranks, dtype=np.float64)[order]
        ncand = np.broadcast_to(np.asarray(n_candidates, dtype=np.int64), users.shape)[order]
        return cls(model, market, split, users[order], ranks, ncand.copy(), hr_at_k(ranks, k), ndcg_at_k(ranks, k))

    def __len__(self) -> int:
        return len(self.users)

    @property
    def mean_ndcg(self) -> float:
        return float(np.mean(self.ndcg))

    @property
    def mean_hr(self) -> float:
        return float(np.mean(self.hr))

    def summary(self) -> dict:
        return {
            "model": self.model,
            "market": self.market,
            "split": self.split,
            "n_users": len(self),
            "ndcg@10": self.mean_ndcg,
            "hr@10": self.mean_hr,
        }

    def save(self, path) -> tuple[Path, Path]:
        """Per-user CSV plus a JSON summary next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "rank", "n_candidates", "hr@10", "ndcg@10"])
            for row in zip(self.users, self.ranks, self.n_candidates, self.hr, self.ndcg):
                w.writerow([int(row[0]), repr(float(row[1])), int(row[2]), repr(float(row[3])), repr(float(row[4]))])
        summary = path.with_suffix(".json")
        summary.write_text(json.dumps(self.summary(), indent=1))
        return path, summary

    @classmethod
    def load(cls, path) -> "EvalReport":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k, t: np.array([t(r[k]) for r in rows], dtype=t)  # noqa: E731
        return cls(
            meta["model"],
            meta["market"],
            meta["split"],
            col("user", np.int64),
            col("rank", np.float64),
            col("n_candidates", np.int64),
            col("hr@10", np.float64),
            col("ndcg@10", np.float64),
        )


def score_candidates(model: Model, users: np.ndarray, candidates: np.ndarray, markets: np.ndarray) -> np.ndarray:
    """Scores for a ``(n, c)`` candidate matrix; padded (-1) slots score -inf."""
    valid = candidates >= 0
    safe = np.where(valid, candidates, 0)
    s = model.predict(users[:, None], safe, markets[:, None])
    return np.where(valid, s, -np.inf)


def ranks_from_matrix(scores: np.ndarray) -> np.ndarray:
    """Pessimistic rank of column 0 within each row."""
    return 1 + np.count_nonzero(scores[:, 1:] >= scores[:, :1], axis=1)


def evaluate(
    model: Model,
    records: Sequence[EvalRecord],
    index: IndexMap,
    market: int,
    market_code: str | None = None,
    split: str = "test",
    model_id: str | None = None,
) -> EvalReport:
    """Rank each record's held-out item against its fixed negatives."""
    if not records:
        raise ValueError("no evaluation records")
    users, cand, markets = index.encode_records(records, market)
    scores = score_candidates(model, users, cand, markets)
    ranks = ranks_from_matrix(scores)
    ncand = (cand >= 0).sum(axis=1)
    global_users = np.array([r.user for r in records])
    code = market_code if market_code is not None else str(market)
    return EvalReport.from_ranks(model_id or model.name, code, split, global_users, ranks, ncand)


def select_best_source(reports: Mapping[str, EvalReport]) -> str:
    """Source with the highest mean validation nDCG@10; ties go to the smaller code."""
    if not reports:
        raise ValueError("no source reports")
    return min(reports, key=lambda k: (-reports[k].mean_ndcg, k))


def aggregate_avg(reports: Sequence[EvalReport], model: str | None = None) -> EvalReport:
    """Per-user mean of metrics across sources."""
    if not reports:
        raise ValueError("nothing to aggregate")
    users = reports[0].users
    for r in reports[1:]:
        if not np.array_equal(r.users, users):
            raise ValueError("reports cover different users")
    stack = lambda attr: np.mean([getattr(r, attr) for r in reports], axis=0)  # noqa: E731
    first = reports[0]
    return EvalReport(
        model or first.model,
        first.market,
        first.split,
        users.copy(),
        stack("ranks"),
        first.n_candidates.copy(),
        stack("hr"),
        stack("ndcg"),
    )


# -- significance ------------------------------------------------------------


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: int
    degenerate: bool = False


def paired_t_test(a, b) -> TTest:
    """Two-sided paired t-test of ``a - b``.

    Identical inputs give ``t=0, p=1`` flagged degenerate.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and equally long")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    if not np.any(d):
        return TTest(0.0, 1.0, n - 1, degenerate=True)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return TTest(math.copysign(math.inf, mean), 0.0, n - 1, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), n - 1))
    return TTest(float(t), min(p, 1.0), n - 1)


def bonferroni(p: float, m: int, alpha: float = ALPHA) -> bool:
    """True iff ``p`` clears the Bonferroni-corrected level ``alpha / m``."""
    if m < 1:
        raise ValueError("number of comparisons must be >= 1")
    return p < alpha / m


@dataclass(frozen=True)
class SignificanceResult:
    model_a: str
    model_b: str
    market: str
    t: float
    p: float
    m: int
    significant: bool
    mean_diff: float = 0.0
    degenerate: bool = False

    @property
    def a_better(self) -> bool:
        return self.significant and self.mean_diff > 0


def compare(a: EvalReport, b: EvalReport, m: int, metric: str = "ndcg") -> SignificanceResult:
    """Paired test of two reports over the same users."""
    if a.market != b.market or not np.array_equal(a.users, b.users):
        raise ValueError("reports are not aligned on market and users")
    va, vb = getattr(a, metric), getattr(b, metric)
    tt = paired_t_test(va, vb)
    return SignificanceResult(
        a.model, b.model, a.market, tt.t, tt.p, m, bonferroni(tt.p, m), float(np.mean(va - vb)), tt.degenerate
    )


SIG_FIELDS = ("model_a", "model_b", "market", "t", "p", "m", "significant", "mean_diff", "degenerate")


def save_significance(results: Sequence[SignificanceResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIG_FIELDS)
        for r in results:
            w.writerow([getattr(r, f) for f in SIG_FIELDS])
    return path


def load_significance(path) -> list[SignificanceResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                SignificanceResult(
                    row["model_a"],
                    row["model_b"],
                    row["market"],
                    float(row["t"]),
                    float(row["p"]),
                    int(row["m"]),
                    row["significant"] == "True",
                    float(row["mean_diff"]),
                    row["degenerate"] == "True",
                )
            )
    return out


__all__ = [
    "ALPHA",
    "CUTOFF",
    "EvalReport",
    "SignificanceResult",
    "TTest",
    "aggregate_avg",
    "bonferroni",
    "compare",
    "evaluate",
    "hr_at_k",
    "load_significance",
    "ndcg_at_k",
    "paired_t_test",
    "rank_from_scores",
    "rank_positive",
    "ranks_from_matrix",
    "save_significance",
    "score_candidates",
    "select_best_source",
]
