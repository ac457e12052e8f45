"""Planted latent-factor markets for desk-scale experiments.

Every market draws from one item-factor matrix; market ``l`` sees it
rotated by ``expm(divergence * pi/2 * S_l)`` with ``S_l`` a random
skew-symmetric matrix of unit spectral radius, so ``divergence=0`` gives
identical preference structure everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .registry import Interaction, MarketRegistry


@dataclass(frozen=True)
class SyntheticSpec:
    markets: tuple[str, ...] = ("de", "jp", "in")
    users_per_market: int = 50
    items_per_market: int = 40
    interactions_per_user: int = 20
    overlap: float = 0.5
    divergence: float = 0.3
    latent_dim: int = 8
    signal: float = 3.0
    popularity: float = 1.0


def _rotation(rng: np.random.Generator, dim: int, divergence: float) -> np.ndarray:
    a = rng.normal(size=(dim, dim))
    s = a - a.T
    radius = np.abs(np.linalg.eigvals(s)).max()
    if divergence == 0 or radius == 0:
        return np.eye(dim)
    return expm(divergence * (np.pi / 2) * s / radius)


def check_spec(spec: SyntheticSpec) -> None:
    if not spec.markets or len(set(spec.markets)) != len(spec.markets):
        raise ValueError("need at least one market and distinct market codes")
    if spec.users_per_market < 1 or spec.items_per_market < 1 or spec.latent_dim < 1:
        raise ValueError("counts must be positive")
    if not 1 <= spec.interactions_per_user <= spec.items_per_market:
        raise ValueError("interactions_per_user must lie in [1, items_per_market]")
    if not 0.0 <= spec.overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    if spec.divergence < 0:
        raise ValueError("divergence must be non-negative")


def generate_synthetic_markets(spec: SyntheticSpec, seed: int = 0) -> tuple[list[Interaction], MarketRegistry]:
    """Sample ``len(markets) * users * interactions_per_user`` implicit events."""
    check_spec(spec)
    rng = np.random.default_rng(seed)
    n_m = len(spec.markets)
    n_shared = int(round(spec.overlap * spec.items_per_market))
    n_own = spec.items_per_market - n_shared
    n_catalog = n_shared + n_m * n_own
    r = spec.latent_dim

    item_f = rng.normal(size=(n_catalog, r))
    item_pop = rng.normal(scale=spec.popularity, size=n_catalog)
    rotations = [_rotation(rng, r, spec.divergence) for _ in range(n_m)]

    registry = MarketRegistry(markets=tuple(spec.markets))
    tokens = [registry.item_id(f"i{j:05d}") for j in range(n_catalog)]
    out: list[Interaction] = []
    for m, code in enumerate(spec.markets):
        pool = np.concatenate([np.arange(n_shared), n_shared + m * n_own + np.arange(n_own)])
        for j in pool:
            registry.add_membership(m, tokens[j])
        v = item_f[pool] @ rotations[m].T
        user_f = rng.normal(size=(spec.users_per_market, r))
        logits = spec.signal * (user_f @ v.T) / np.sqrt(r) + item_pop[pool]
        for u in range(spec.users_per_market):
            uid = registry.user_id(m, f"{code}_u{u:05d}")
            # Gumbel top-k: k draws without replacement from softmax(logits)
            g = logits[u] + rng.gumbel(size=len(pool))
            picked = np.argsort(-g, kind="stable")[: spec.interactions_per_user]
            stamps = np.sort(rng.choice(10**6, size=len(picked), replace=False)) + 1_600_000_000
            order = rng.permutation(len(picked))
            for t, j in zip(stamps, picked[order]):
                out.append(Interaction(uid, tokens[pool[j]], 1.0, int(t), m))
    return out, registry
