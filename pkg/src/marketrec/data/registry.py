"""Markets, a shared item vocabulary, and market-scoped users."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

XMARKET_CODES = ("de", "jp", "in", "fr", "ca", "mx", "uk", "us")

# (users, items, interactions) of the Electronics subset per market
XMARKET_ELECTRONICS_COUNTS = {
    "de": (2373, 2210, 22247),
    "jp": (487, 955, 4485),
    "in": (239, 470, 2015),
    "fr": (2396, 1911, 22905),
    "ca": (5675, 5772, 55045),
    "mx": (1878, 1645, 17095),
    "uk": (4847, 3302, 44515),
    "us": (35916, 31125, 364339),
}


class Interaction(NamedTuple):
    user: int
    item: int
    rating: float
    timestamp: int | None
    market: int


class RegistryError(ValueError):
    pass


@dataclass
class MarketRegistry:
    """ID maps for markets, users and items.

    Users are keyed by ``(market, token)`` so the same token in two markets
    yields two distinct users.  Items share one global vocabulary.
    """

    markets: tuple[str, ...] = XMARKET_CODES
    base_market: str | None = None
    user_keys: list[tuple[int, str]] = field(default_factory=list)
    item_tokens: list[str] = field(default_factory=list)
    market_items: dict[int, set[int]] = field(default_factory=dict)
    market_users: dict[int, set[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.markets = tuple(self.markets)
        if len(set(self.markets)) != len(self.markets):
            raise RegistryError("duplicate market codes")
        if self.base_market is not None and self.base_market not in self.markets:
            raise RegistryError(f"base market {self.base_market!r} is not a declared market")
        self._user_index = {key: uid for uid, key in enumerate(self.user_keys)}
        self._item_index = {tok: iid for iid, tok in enumerate(self.item_tokens)}
        for m in range(len(self.markets)):
            self.market_items.setdefault(m, set())
            self.market_users.setdefault(m, set())

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_items(self) -> int:
        return len(self.item_tokens)

    def market_id(self, code: str) -> int:
        try:
            return self.markets.index(code)
        except ValueError:
            raise RegistryError(f"unknown market code {code!r}") from None

    def market_code(self, market_id: int) -> str:
        return self.markets[market_id]

    def user_id(self, market: int, token: str, create: bool = True) -> int:
        key = (market, token)
        uid = self._user_index.get(key)
        if uid is None:
            if not create:
                raise KeyError(f"unknown user {token!r} in market {self.markets[market]!r}")
            uid = len(self.user_keys)
            self.user_keys.append(key)
            self._user_index[key] = uid
            self.market_users[market].add(uid)
        return uid

    def item_id(self, token: str, create: bool = True) -> int:
        iid = self._item_index.get(token)
        if iid is None:
            if not create:
                raise KeyError(f"unknown item {token!r}")
            iid = len(self.item_tokens)
            self.item_tokens.append(token)
            self._item_index[token] = iid
        return iid

    def user_market(self, user: int) -> int:
        return self.user_keys[user][0]

    def add_membership(self, market: int, item: int) -> None:
        self.market_items[market].add(item)

    def pool(self, market: int) -> np.ndarray:
        """Sorted item ids offered in ``market``."""
        return np.array(sorted(self.market_items[market]), dtype=np.int64)

    def active_markets(self) -> list[int]:
        return [m for m in range(len(self.markets)) if self.market_users[m]]

    def check_invariants(self) -> None:
        """Raise if a market's items escape the base market or users overlap."""
        seen: set[int] = set()
        for m, users in self.market_users.items():
            if seen & users:
                raise RegistryError("user ids overlap across markets")
            seen |= users
        if self.base_market is None:
            return
        base = self.market_items[self.market_id(self.base_market)]
        for m, items in self.market_items.items():
            extra = items - base
            if extra:
                raise RegistryError(
                    f"market {self.markets[m]!r} has {len(extra)} items outside base market "
                    f"{self.base_market!r}"
                )

    def counts(self, interactions: Sequence[Interaction]) -> dict[str, tuple[int, int, int]]:
        """``(users, items, interactions)`` per market code."""
        n_inter = np.bincount([x.market for x in interactions], minlength=len(self.markets))
        return {
            code: (len(self.market_users[m]), len(self.market_items[m]), int(n_inter[m]))
            for m, code in enumerate(self.markets)
            if self.market_users[m]
        }

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "markets": list(self.markets),
            "base_market": self.base_market,
            "users": [[m, tok] for m, tok in self.user_keys],
            "items": list(self.item_tokens),
            "market_items": {str(m): sorted(s) for m, s in self.market_items.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "MarketRegistry":
        keys = [(int(m), tok) for m, tok in d["users"]]
        users: dict[int, set[int]] = {}
        for uid, (m, _) in enumerate(keys):
            users.setdefault(m, set()).add(uid)
        return cls(
            markets=tuple(d["markets"]),
            base_market=d.get("base_market"),
            user_keys=keys,
            item_tokens=list(d["items"]),
            market_items={int(m): set(v) for m, v in d["market_items"].items()},
            market_users=users,
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def interactions_fingerprint(interactions: Sequence[Interaction]) -> str:
    h = hashlib.sha256()
    for x in sorted(interactions, key=lambda r: (r.market, r.user, r.item)):
        h.update(f"{x.market}\t{x.user}\t{x.item}\t{x.rating!r}\t{x.timestamp}\n".encode())
    return h.hexdigest()[:16]


def by_market(interactions: Sequence[Interaction]) -> dict[int, list[Interaction]]:
    out: dict[int, list[Interaction]] = {}
    for x in interactions:
        out.setdefault(x.market, []).append(x)
    return out
