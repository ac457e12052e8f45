"""Adam, L2 penalty gradients and seeded parameter initialisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = ["AdamState", "adam_step", "l2_grad", "init_params", "INIT_SCHEMES"]

INIT_SCHEMES = ("gaussian", "glorot_uniform", "zeros", "ones")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, in place.

    Only parameters present in ``grads`` move; this is how frozen groups
    are kept bitwise fixed.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def l2_grad(params: Mapping[str, np.ndarray], lam: float, names: Iterable[str] | None = None):
    """Gradient of ``(lam / 2) * ||theta||^2`` for each named parameter."""
    if lam < 0:
        raise ValueError("L2 coefficient must be non-negative")
    keys = params.keys() if names is None else names
    return {k: lam * params[k] for k in keys}


def init_params(shape, scheme: str, seed, std: float = 0.01) -> np.ndarray:
    """Deterministic initial values for ``shape`` under ``scheme``.

    ``seed`` is an int or a ``numpy.random.Generator``.  Glorot bounds use
    the last axis as fan-in and the first as fan-out, matching the
    ``(out, in)`` weight layout.
    """
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme == "ones":
        return np.ones(shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if scheme == "gaussian":
        return rng.normal(0.0, std, size=shape)
    fan_out, fan_in = (shape[0], shape[-1]) if len(shape) > 1 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
