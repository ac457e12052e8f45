"""GMF, MLP and NMF scorers, with and without market embeddings.

Parameters live in a flat ``name -> ndarray`` mapping.  Names are shared
across kinds so NMF can be warm-started by copying entries from trained GMF
and MLP models:

========================  ==============================================
``gmf.user/gmf.item``     GMF tower embeddings (GMF, NMF)
``mlp.user/mlp.item``     MLP tower embeddings (MLP, NMF)
``mlp.W{k}/mlp.b{k}``     MLP layer ``k`` weights ``(out, in)`` and bias
``market``                market embeddings (market-aware kinds)
``gmf.market/mlp.market`` per-tower market tables when split
``h``                     output vector
``h.bias``                output bias (when ``output_bias`` is set)
========================  ==============================================
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .nn import Tensor, add, affine, concat, init_params, matmul, mul, no_record, relu, sigmoid, take

KINDS = ("gmf", "mlp", "nmf")
DEFAULT_LAYERS = (16, 64, 32, 16, 8)
CHECKPOINT_VERSION = 1

# parameter groups a FreezeMask can address
GROUPS = ("user", "item", "market", "mlp_layers", "output")


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    market_aware: bool = False
    n_users: int = 1
    n_items: int = 1
    n_markets: int = 1
    embed_dim: int = 8
    layer_plan: tuple[int, ...] = DEFAULT_LAYERS
    split_market_tables: bool = False
    output_bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "layer_plan", tuple(int(n) for n in self.layer_plan))
        for name in ("n_users", "n_items", "n_markets", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kind != "gmf":
            plan, d = self.layer_plan, self.embed_dim
            if len(plan) < 2 or plan[0] != 2 * d or plan[-1] != d:
                raise ValueError(f"layer plan {plan} must start at {2 * d} and end at {d}")

    @property
    def name(self) -> str:
        return ("MA-" if self.market_aware else "") + self.kind.upper()

    @property
    def n_layers(self) -> int:
        return len(self.layer_plan) - 1 if self.kind != "gmf" else 0


def param_group(name: str) -> str:
    if name in ("h", "h.bias"):
        return "output"
    if "market" in name:
        return "market"
    if name.endswith(".user"):
        return "user"
    if name.endswith(".item"):
        return "item"
    return "mlp_layers"


def _market_tables(cfg: ModelConfig) -> list[str]:
    if not cfg.market_aware:
        return []
    if cfg.kind == "nmf" and cfg.split_market_tables:
        return ["gmf.market", "mlp.market"]
    return ["market"]


def init_model_params(cfg: ModelConfig, seed=0, market_init: str = "ones") -> dict[str, np.ndarray]:
    """Gaussian(0, 0.01) user/item embeddings and h, Glorot-uniform weights, zero biases
    (the output bias included).

    Market tables start at ones so an untrained market-aware model scores
    exactly like its market-unaware counterpart.
    """
    rng = np.random.default_rng(seed)
    d = cfg.embed_dim
    p: dict[str, np.ndarray] = {}
    towers = {"gmf": ["gmf"], "mlp": ["mlp"], "nmf": ["gmf", "mlp"]}[cfg.kind]
    for t in towers:
        p[f"{t}.user"] = init_params((cfg.n_users, d), "gaussian", rng)
        p[f"{t}.item"] = init_params((cfg.n_items, d), "gaussian", rng)
    for name in _market_tables(cfg):
        p[name] = init_params((cfg.n_markets, d), market_init, rng)
    if "mlp" in towers:
        plan = cfg.layer_plan
        for k in range(1, len(plan)):
            p[f"mlp.W{k}"] = init_params((plan[k], plan[k - 1]), "glorot_uniform", rng)
            p[f"mlp.b{k}"] = init_params((plan[k],), "zeros", rng)
    h_len = d * len(towers) if cfg.kind == "nmf" else d
    p["h"] = init_params((h_len,), "gaussian", rng)
    if cfg.output_bias:
        p["h.bias"] = np.zeros(1)
    return p


class Model:
    """A scorer plus its parameters.

    ``forward`` is functional in the parameters so callers (MAML) can
    evaluate the network at adapted parameter values.
    """

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray] | None = None, seed=0):
        self.config = config
        if params is None:
            params = init_model_params(config, seed)
        self.params: dict[str, np.ndarray] = {
            k: np.array(v, dtype=np.float64) for k, v in params.items()
        }
        self._check_shapes()

    def _check_shapes(self) -> None:
        ref = init_shapes(self.config)
        if set(ref) != set(self.params):
            missing = sorted(set(ref) ^ set(self.params))
            raise ValueError(f"parameter set does not match {self.config.name}: {missing}")
        for k, shape in ref.items():
            if self.params[k].shape != shape:
                raise ValueError(f"{k} has shape {self.params[k].shape}, expected {shape}")

    @property
    def name(self) -> str:
        return self.config.name

    def __repr__(self) -> str:
        c = self.config
        return f"Model({c.name}, users={c.n_users}, items={c.n_items}, markets={c.n_markets})"

    def forward(self, params: Mapping[str, Tensor], users, items, markets) -> Tensor:
        """Predicted interaction probability for each ``(user, item, market)`` row."""
        cfg = self.config
        users = np.asarray(users, dtype=np.intp)
        items = np.asarray(items, dtype=np.intp)
        markets = np.asarray(markets, dtype=np.intp)
        if cfg.market_aware and markets.size and (markets.min() < 0 or markets.max() >= cfg.n_markets):
            raise IndexError(f"market index out of range for {cfg.n_markets} markets")
        split = cfg.split_market_tables and cfg.kind == "nmf"

        def gmf_vector():
            q = take(params["gmf.item"], items)
            if cfg.market_aware:
                o = take(params["gmf.market" if split else "market"], markets)
                q = mul(o, q)
            return mul(take(params["gmf.user"], users), q)

        def mlp_vector():
            q = take(params["mlp.item"], items)
            if cfg.market_aware:
                o = take(params["mlp.market" if split else "market"], markets)
                q = mul(q, o)
            m = concat([take(params["mlp.user"], users), q])
            for k in range(1, cfg.n_layers + 1):
                m = relu(affine(params[f"mlp.W{k}"], params[f"mlp.b{k}"], m))
            return m

        if cfg.kind == "gmf":
            z = gmf_vector()
        elif cfg.kind == "mlp":
            z = mlp_vector()
        else:
            z = concat([gmf_vector(), mlp_vector()])
        logit = matmul(z, params["h"])
        if cfg.output_bias:
            logit = add(logit, params["h.bias"])
        return sigmoid(logit)

    def predict(self, users, items, markets=None) -> np.ndarray:
        """Scores as a plain array; nothing is recorded."""
        users = np.asarray(users)
        if markets is None:
            markets = np.zeros_like(users)
        markets = np.broadcast_to(np.asarray(markets), users.shape)
        items = np.asarray(items)
        shape = np.broadcast_shapes(users.shape, items.shape)
        u = np.broadcast_to(users, shape).ravel()
        i = np.broadcast_to(items, shape).ravel()
        m = np.broadcast_to(markets, shape).ravel()
        with no_record():
            out = self.forward(self.tensors(requires_grad=False), u, i, m)
        return out.value.reshape(shape)

    def score(self, user: int, item: int, market: int = 0) -> float:
        return float(self.predict(np.array([user]), np.array([item]), np.array([market]))[0])

    def tensors(self, requires_grad: bool = True, names=None) -> dict[str, Tensor]:
        """Wrap parameters (without copying) as tensors."""
        trainable = set(self.params if names is None else names)
        return {
            k: Tensor(v, requires_grad=requires_grad and k in trainable, name=k)
            for k, v in self.params.items()
        }

    def fork(self) -> "Model":
        return copy.deepcopy(self)

    def parameter_count(self) -> int:
        return parameter_count(self)

    def save(self, path, index=None) -> Path:
        return save_checkpoint(self, path, index=index)


def init_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {}
    towers = {"gmf": ["gmf"], "mlp": ["mlp"], "nmf": ["gmf", "mlp"]}[cfg.kind]
    for t in towers:
        shapes[f"{t}.user"] = (cfg.n_users, d)
        shapes[f"{t}.item"] = (cfg.n_items, d)
    for name in _market_tables(cfg):
        shapes[name] = (cfg.n_markets, d)
    if "mlp" in towers:
        plan = cfg.layer_plan
        for k in range(1, len(plan)):
            shapes[f"mlp.W{k}"] = (plan[k], plan[k - 1])
            shapes[f"mlp.b{k}"] = (plan[k],)
    shapes["h"] = (d * len(towers),)
    if cfg.output_bias:
        shapes["h.bias"] = (1,)
    return shapes


def score(model: Model, user_id: int, item_id: int, market_id: int = 0) -> float:
    return model.score(user_id, item_id, market_id)


def fork(model: Model) -> Model:
    """Independent deep copy of ``model``."""
    return model.fork()


def parameter_count(model: Model) -> int:
    return int(sum(v.size for v in model.params.values()))


def warm_start_nmf(gmf: Model, mlp: Model, alpha: float = 0.5) -> Model:
    """NMF whose towers copy trained GMF and MLP donors.

    The output vector is ``concat(alpha * h_gmf, (1 - alpha) * h_mlp)`` and
    the output bias mixes the same way.  A shared market table is taken
    from the GMF donor.
    """
    g, m = gmf.config, mlp.config
    if g.kind != "gmf" or m.kind != "mlp":
        raise ValueError("warm start needs a GMF donor and an MLP donor")
    if g.market_aware != m.market_aware:
        raise ValueError("donors disagree on market awareness")
    for attr in ("n_users", "n_items", "n_markets", "embed_dim", "output_bias"):
        if getattr(g, attr) != getattr(m, attr):
            raise ValueError(f"donors disagree on {attr}: {getattr(g, attr)} vs {getattr(m, attr)}")
    cfg = ModelConfig(
        kind="nmf",
        market_aware=g.market_aware,
        n_users=g.n_users,
        n_items=g.n_items,
        n_markets=g.n_markets,
        embed_dim=g.embed_dim,
        layer_plan=m.layer_plan,
        output_bias=g.output_bias,
    )
    params = {k: v.copy() for k, v in gmf.params.items() if k.startswith("gmf.")}
    params.update({k: v.copy() for k, v in mlp.params.items() if k.startswith("mlp.")})
    if cfg.market_aware:
        params["market"] = gmf.params["market"].copy()
    params["h"] = np.concatenate([alpha * gmf.params["h"], (1.0 - alpha) * mlp.params["h"]])
    if cfg.output_bias:
        params["h.bias"] = alpha * gmf.params["h.bias"] + (1.0 - alpha) * mlp.params["h.bias"]
    return Model(cfg, params)


def split_market_tables(model: Model) -> Model:
    """MA-NMF variant with one market table per tower, both starting from the shared one."""
    cfg = model.config
    if cfg.kind != "nmf" or not cfg.market_aware or cfg.split_market_tables:
        raise ValueError("expects an MA-NMF with a shared market table")
    params = {k: v.copy() for k, v in model.params.items() if k != "market"}
    params["gmf.market"] = model.params["market"].copy()
    params["mlp.market"] = model.params["market"].copy()
    new_cfg = ModelConfig(**{**asdict(cfg), "split_market_tables": True})
    return Model(new_cfg, params)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(model: Model, path, index=None) -> Path:
    """Write config, tensors and (optionally) the ID map to an ``.npz`` file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "index_fingerprint": index.fingerprint() if index is not None else None,
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    if index is not None:
        arrays.update({f"index/{k}": v for k, v in index.arrays().items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Read a checkpoint; returns ``(model, index_or_None)``."""
    from .data.trainset import IndexMap

    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        idx = {k[len("index/"):]: z[k] for k in z.files if k.startswith("index/")}
    cfg_d = meta["config"]
    cfg_d["layer_plan"] = tuple(cfg_d["layer_plan"])
    model = Model(ModelConfig(**cfg_d), params)
    index = IndexMap.from_arrays(idx) if idx else None
    if index is not None and meta["index_fingerprint"] != index.fingerprint():
        raise ValueError("checkpoint ID map does not match its recorded fingerprint")
    return model, index


def params_digest(model: Model) -> str:
    h = hashlib.sha256()
    for k in sorted(model.params):
        h.update(k.encode())
        h.update(model.params[k].tobytes())
    return h.hexdigest()


__all__ = [
    "KINDS",
    "GROUPS",
    "DEFAULT_LAYERS",
    "ModelConfig",
    "Model",
    "param_group",
    "init_model_params",
    "score",
    "fork",
    "parameter_count",
    "warm_start_nmf",
    "split_market_tables",
    "save_checkpoint",
    "load_checkpoint",
    "params_digest",
]
