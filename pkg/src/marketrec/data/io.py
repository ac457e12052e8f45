"""Canonical interaction files and split manifests.

Interaction files are UTF-8, one tab-separated record per line::

    market_code  user_token  item_token  rating  timestamp

``timestamp`` is an integer epoch or ``-`` when unknown.  Blank lines and
lines starting with ``#`` are skipped.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .registry import Interaction, MarketRegistry, RegistryError, XMARKET_CODES
from .split import EvalRecord, SplitDataset

SPLIT_FORMAT_VERSION = 1


class DataFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _parse_line(path, lineno: int, line: str):
    parts = line.rstrip("\n").rstrip("\r").split("\t")
    if len(parts) != 5:
        raise DataFormatError(path, lineno, f"expected 5 tab-separated fields, got {len(parts)}")
    code, user, item, rating, ts = (p.strip() for p in parts)
    if not user or not item:
        raise DataFormatError(path, lineno, "empty user or item token")
    try:
        rating_v = float(rating)
    except ValueError:
        raise DataFormatError(path, lineno, f"bad rating {rating!r}") from None
    if ts == "-":
        ts_v = None
    else:
        try:
            ts_v = int(ts)
        except ValueError:
            raise DataFormatError(path, lineno, f"bad timestamp {ts!r}") from None
    return code, user, item, rating_v, ts_v


def load_interactions(
    path,
    registry: MarketRegistry | None = None,
    base_market: str | None = None,
    markets: Sequence[str] = XMARKET_CODES,
) -> tuple[list[Interaction], MarketRegistry]:
    """Parse, deduplicate and ID-map a canonical interaction file.

    Duplicate ``(user, item)`` pairs within a market keep the latest
    timestamp; a missing timestamp loses to any known one, and equal
    timestamps keep the later line.
    """
    if registry is None:
        registry = MarketRegistry(markets=tuple(markets), base_market=base_market)
    latest: dict[tuple[int, int], tuple[tuple, Interaction]] = {}
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            code, user_tok, item_tok, rating, ts = _parse_line(path, lineno, line)
            try:
                m = registry.market_id(code)
            except RegistryError as exc:
                raise DataFormatError(path, lineno, str(exc)) from None
            uid = registry.user_id(m, user_tok)
            iid = registry.item_id(item_tok)
            registry.add_membership(m, iid)
            x = Interaction(uid, iid, rating, ts, m)
            order = (ts is not None, ts if ts is not None else 0, lineno)
            prev = latest.get((uid, iid))
            if prev is None or order > prev[0]:
                latest[(uid, iid)] = (order, x)
    registry.check_invariants()
    rows = sorted(latest.values(), key=lambda p: p[0][2])
    return [x for _, x in rows], registry


def write_interactions(path, interactions: Iterable[Interaction], registry: MarketRegistry) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for x in interactions:
            _, user_tok = registry.user_keys[x.user]
            ts = "-" if x.timestamp is None else str(x.timestamp)
            fh.write(
                f"{registry.markets[x.market]}\t{user_tok}\t{registry.item_tokens[x.item]}"
                f"\t{x.rating:g}\t{ts}\n"
            )
    return path


def save_split(split: SplitDataset, path, dataset_fingerprint: str) -> Path:
    """Persist a split and its evaluation negatives as versioned JSON."""
    doc = {
        "format_version": SPLIT_FORMAT_VERSION,
        "dataset": dataset_fingerprint,
        "seed": split.seed,
        "market": split.market,
        "pool": [int(i) for i in split.pool],
        "train": [list(x) for x in split.train],
        "validation": [r.to_json() for r in split.validation],
        "test": [r.to_json() for r in split.test],
        "shortfall": {str(k): v for k, v in split.shortfall.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_split(path, dataset_fingerprint: str | None = None) -> SplitDataset:
    import numpy as np

    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != SPLIT_FORMAT_VERSION:
        raise ValueError(f"unsupported split format {doc.get('format_version')}")
    if dataset_fingerprint is not None and doc["dataset"] != dataset_fingerprint:
        raise ValueError("split manifest was built from a different dataset")
    return SplitDataset(
        market=doc["market"],
        train=[Interaction(*row) for row in doc["train"]],
        validation=[EvalRecord.from_json(r) for r in doc["validation"]],
        test=[EvalRecord.from_json(r) for r in doc["test"]],
        seed=doc["seed"],
        pool=np.asarray(doc["pool"], dtype=np.int64),
        shortfall={int(k): v for k, v in doc["shortfall"].items()},
    )


def split_manifest_name(market_code: str, dataset_fingerprint: str, seed: int) -> str:
    return f"split_{market_code}_{dataset_fingerprint}_s{seed}.json"
