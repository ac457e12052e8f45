"""Mini-batch BCE training, MAML meta-training and FOREC fine-tuning."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .data.trainset import NegativeSampler, TrainSet
from .models import GROUPS, Model, param_group
from .nn import AdamState, Tape, Tensor, adam_step, bce_loss

DEFAULT_LR = {"gmf": 0.005, "mlp": 0.01, "nmf": 0.01}


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 1024
    lr: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LR))
    l2: float = 1e-7
    negatives: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.negatives < 1:
            raise ValueError("epochs must be >= 0, batch_size and negatives >= 1")
        if self.l2 < 0 or any(v <= 0 for v in self.lr.values()):
            raise ValueError("learning rates must be positive and l2 non-negative")

    def lr_for(self, kind: str) -> float:
        try:
            return self.lr[kind]
        except KeyError:
            raise ValueError(f"no learning rate configured for {kind!r}") from None


@dataclass
class MamlConfig:
    fast_lr: float = 0.1
    shots: int = 20
    inner_steps: int = 1
    meta_lr: float | None = None
    meta_epochs: int = 25
    negatives: int = 4
    l2: float = 1e-7
    first_order: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1 or self.inner_steps < 1:
            raise ValueError("shots and inner_steps must be >= 1")
        if self.fast_lr < 0 or self.meta_epochs < 0:
            raise ValueError("fast_lr and meta_epochs must be non-negative")


@dataclass(frozen=True)
class FreezeMask:
    """Parameter groups held fixed during fine-tuning."""

    frozen: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        unknown = self.frozen - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        if self.frozen >= set(GROUPS):
            raise ValueError("a freeze mask must leave at least one group trainable")

    @classmethod
    def forec_default(cls) -> "FreezeMask":
        return cls(frozenset({"item", "mlp_layers"}))

    def trainable(self, names: Iterable[str]) -> list[str]:
        return [n for n in names if param_group(n) not in self.frozen]


@dataclass
class RunRecord:
    model: str
    fingerprint: str
    config: dict
    epoch_loss: list[float]
    seconds: float
    seed: int
    flags: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1))
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


# -- shared pieces -----------------------------------------------------------


def batch_loss(model: Model, params: Mapping[str, Tensor], batch) -> Tensor:
    users, items, markets, labels = batch
    return bce_loss(model.forward(params, users, items, markets), labels)


def loss_and_grads(model: Model, params: Mapping[str, np.ndarray], names, batch):
    """Mean BCE on ``batch`` and its gradient for the named parameters."""
    names = set(names)
    tensors = {k: Tensor(v, requires_grad=k in names) for k, v in params.items()}
    with Tape() as tape:
        loss = batch_loss(model, tensors, batch)
    grads = tape.gradient(loss, {k: tensors[k] for k in names})
    return loss.item(), grads


def with_negatives(users, items, markets, sampler: NegativeSampler, k: int, rng):
    """Positives (label 1) followed by ``k`` sampled negatives each (label 0)."""
    neg = sampler.sample(users, markets, k, rng)
    n = len(users)
    u = np.concatenate([users, np.repeat(users, k)])
    i = np.concatenate([items, neg.ravel()])
    m = np.concatenate([markets, np.repeat(markets, k)])
    y = np.concatenate([np.ones(n), np.zeros(n * k)])
    return u, i, m, y


def _check_dims(model: Model, data: TrainSet) -> None:
    c = model.config
    if (c.n_users, c.n_items) != (data.n_users, data.n_items) or c.n_markets < data.n_markets:
        raise ValueError(
            f"{c.name} tables ({c.n_users} users, {c.n_items} items, {c.n_markets} markets) do not "
            f"match the data ({data.n_users}, {data.n_items}, {data.n_markets})"
        )


def _add_l2(grads: dict, params: Mapping[str, np.ndarray], lam: float) -> None:
    if lam:
        for k in grads:
            grads[k] = grads[k] + lam * params[k]


# -- standard trainer --------------------------------------------------------


def train(
    model: Model,
    data: TrainSet,
    config: TrainConfig | None = None,
    mask: FreezeMask | None = None,
    name: str | None = None,
) -> tuple[Model, RunRecord]:
    """Train ``model`` in place with Adam on BCE plus an L2 penalty.

    Each epoch resamples negatives, shuffles and walks mini-batches.  The
    wall-clock covers the epoch loop only.
    """
    config = config or TrainConfig()
    if len(data) == 0:
        raise ValueError("empty training set")
    _check_dims(model, data)
    mask = mask or FreezeMask()
    names = mask.trainable(model.params)
    if not names:
        raise ValueError("every parameter group is frozen")
    lr = config.lr_for(model.config.kind)
    sampler = NegativeSampler(data)
    rng = np.random.default_rng([int(config.seed), 11])
    state = AdamState()
    losses: list[float] = []

    start = time.perf_counter()
    for _ in range(config.epochs):
        u, i, m, y = with_negatives(data.users, data.items, data.markets, sampler, config.negatives, rng)
        perm = rng.permutation(len(u))
        total = 0.0
        for s in range(0, len(perm), config.batch_size):
            b = perm[s : s + config.batch_size]
            loss, grads = loss_and_grads(model, model.params, names, (u[b], i[b], m[b], y[b]))
            _add_l2(grads, model.params, config.l2)
            adam_step(model.params, grads, state, lr)
            total += loss * len(b)
        losses.append(total / len(perm))
    seconds = time.perf_counter() - start

    record = RunRecord(
        model=name or model.name,
        fingerprint=data.fingerprint(),
        config={**asdict(config), "frozen": sorted(mask.frozen)},
        epoch_loss=losses,
        seconds=max(seconds, 1e-9),
        seed=config.seed,
    )
    return model, record


# -- MAML --------------------------------------------------------------------


def maml_meta_gradient(
    loss_fn: Callable[[Mapping[str, Tensor], object], Tensor],
    params: Mapping[str, np.ndarray],
    support,
    query,
    fast_lr: float,
    inner_steps: int = 1,
    first_order: bool = True,
) -> tuple[dict[str, np.ndarray], float]:
    """Meta-gradient of the query loss after ``inner_steps`` SGD steps on support.

    First-order drops the Jacobian of the adapted point; otherwise the inner
    gradients are recorded and differentiated through.
    """
    if first_order:
        adapted = dict(params)
        for _ in range(inner_steps):
            leaves = {k: Tensor(v, requires_grad=True) for k, v in adapted.items()}
            with Tape() as tape:
                ls = loss_fn(leaves, support)
            g = tape.gradient(ls, leaves)
            adapted = {k: adapted[k] - fast_lr * g[k] for k in adapted}
        leaves = {k: Tensor(v, requires_grad=True) for k, v in adapted.items()}
        with Tape() as tape:
            lq = loss_fn(leaves, query)
        return tape.gradient(lq, leaves), lq.item()

    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    with Tape() as tape:
        cur: dict[str, Tensor] = dict(leaves)
        for _ in range(inner_steps):
            ls = loss_fn(cur, support)
            g = tape.gradient(ls, cur, create_graph=True)
            cur = {k: cur[k] - fast_lr * g[k] for k in cur}
        lq = loss_fn(cur, query)
    return tape.gradient(lq, leaves), lq.item()


class _TaskStream:
    """Support/query positives for one market task."""

    def __init__(self, task: TrainSet, shots: int, rng: np.random.Generator):
        self.task, self.shots, self.rng = task, shots, rng
        self.disjoint = len(task) >= 2 * shots
        self.order = rng.permutation(len(task))
        self.cursor = 0

    def draw(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.shots
        if not self.disjoint:
            idx = self.rng.integers(0, len(self.task), size=2 * k)
            return idx[:k], idx[k:]
        if self.cursor + 2 * k > len(self.order):
            self.order = self.rng.permutation(len(self.task))
            self.cursor = 0
        idx = self.order[self.cursor : self.cursor + 2 * k]
        self.cursor += 2 * k
        return idx[:k], idx[k:]


def train_maml(init: Model, data: TrainSet, mcfg: MamlConfig | None = None) -> tuple[Model, RunRecord]:
    """Meta-train a copy of ``init`` treating each market of ``data`` as a task.

    One meta-iteration adapts to every task in a fixed order and applies the
    averaged query gradient with Adam.  A meta-epoch runs enough iterations
    to visit the largest task's positives once.
    """
    mcfg = mcfg or MamlConfig()
    if len(data) == 0:
        raise ValueError("empty training set")
    _check_dims(init, data)
    model = init.fork()
    meta_lr = mcfg.meta_lr if mcfg.meta_lr is not None else DEFAULT_LR[model.config.kind]
    rng = np.random.default_rng([int(mcfg.seed), 13])
    sampler = NegativeSampler(data)
    tasks = [data.subset_market(m) for m in sorted(data.market_sizes())]
    streams = [_TaskStream(t, mcfg.shots, rng) for t in tasks]
    iters = max(1, math.ceil(max(len(t) for t in tasks) / (2 * mcfg.shots)))
    loss_fn = lambda params, batch: batch_loss(model, params, batch)  # noqa: E731
    state = AdamState()
    losses: list[float] = []

    start = time.perf_counter()
    for _ in range(mcfg.meta_epochs):
        total = 0.0
        for _ in range(iters):
            acc = {k: np.zeros_like(v) for k, v in model.params.items()}
            for stream in streams:
                t = stream.task
                s_idx, q_idx = stream.draw()
                support = with_negatives(t.users[s_idx], t.items[s_idx], t.markets[s_idx], sampler, mcfg.negatives, rng)
                query = with_negatives(t.users[q_idx], t.items[q_idx], t.markets[q_idx], sampler, mcfg.negatives, rng)
                g, lq = maml_meta_gradient(
                    loss_fn, model.params, support, query, mcfg.fast_lr, mcfg.inner_steps, mcfg.first_order
                )
                for k in acc:
                    acc[k] += g[k]
                total += lq
            grads = {k: v / len(streams) for k, v in acc.items()}
            _add_l2(grads, model.params, mcfg.l2)
            adam_step(model.params, grads, state, meta_lr)
        losses.append(total / (iters * len(streams)))
    seconds = time.perf_counter() - start

    record = RunRecord(
        model="MAML",
        fingerprint=data.fingerprint(),
        config={**asdict(mcfg), "meta_lr": meta_lr, "iterations_per_epoch": iters},
        epoch_loss=losses,
        seconds=max(seconds, 1e-9),
        seed=mcfg.seed,
        flags={"resampled_tasks": [int(t.markets[0]) for t, s in zip(tasks, streams) if not s.disjoint]},
    )
    return model, record


def forec_adapt(
    maml_model: Model,
    target: TrainSet,
    mask: FreezeMask | None = None,
    config: TrainConfig | None = None,
) -> tuple[Model, RunRecord]:
    """Fork the MAML model, freeze ``mask`` groups, fine-tune on the target market."""
    mask = mask or FreezeMask.forec_default()
    forked = maml_model.fork()
    return train(forked, target, config, mask=mask, name="FOREC")


__all__ = [
    "DEFAULT_LR",
    "TrainConfig",
    "MamlConfig",
    "FreezeMask",
    "RunRecord",
    "batch_loss",
    "loss_and_grads",
    "with_negatives",
    "train",
    "maml_meta_gradient",
    "train_maml",
    "forec_adapt",
]
