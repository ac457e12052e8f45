"""Experiment configuration and its key-value file format.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Lists are comma separated.  Nested settings use dotted keys::

    dataset = data/electronics.tsv
    targets = de, jp, in, fr, ca, mx, uk
    sources = de, jp, in, fr, ca, mx, uk, us
    methods = GMF++, MA-GMF++, NMF++, MA-NMF++, MAML, FOREC
    seed = 0
    train.epochs = 25
    train.lr.gmf = 0.005
    maml.shots = 20
    synthetic.users_per_market = 200

Every key can also be given on the command line as ``--set key=value``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..data.registry import XMARKET_CODES
from ..data.synthetic import SyntheticSpec
from ..training import FreezeMask, MamlConfig, TrainConfig

CROSS_METHODS = ("GMF++", "MA-GMF++", "MLP++", "MA-MLP++", "NMF++", "MA-NMF++", "MAML", "FOREC")
SINGLE_METHODS = ("GMF", "MLP", "NMF")
ALL_METHODS = SINGLE_METHODS + CROSS_METHODS

# internal keys: the "++" suffix is a property of the data, not the model
PREREQUISITES = {
    "NMF": ("GMF", "MLP"),
    "MA-NMF": ("MA-GMF", "MA-MLP"),
    "MAML": ("NMF",),
    "FOREC": ("MAML",),
}
TRAIN_ORDER = ("GMF", "MLP", "NMF", "MA-GMF", "MA-MLP", "MA-NMF", "MAML", "FOREC")


def method_key(label: str) -> str:
    return label[:-2] if label.endswith("++") else label


def with_prerequisites(keys) -> list[str]:
    """Keys plus everything they depend on, in training order."""
    need = set(keys)
    frontier = list(need)
    while frontier:
        for dep in PREREQUISITES.get(frontier.pop(), ()):
            if dep not in need:
                need.add(dep)
                frontier.append(dep)
    return [k for k in TRAIN_ORDER if k in need]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    synthetic: SyntheticSpec | None = None
    markets: tuple[str, ...] = XMARKET_CODES
    base_market: str | None = None
    targets: tuple[str, ...] = ()
    sources: tuple[str, ...] = ()
    methods: tuple[str, ...] = CROSS_METHODS
    train: TrainConfig = field(default_factory=TrainConfig)
    maml: MamlConfig = field(default_factory=MamlConfig)
    seed: int = 0
    out_dir: str = "runs"
    significance_m: int | None = None
    nmf_alpha: float = 0.5
    forec_freeze: tuple[str, ...] = ("item", "mlp_layers")
    split_market_tables: bool = False
    workers: int = 1
    repeats: int = 1
    resume: bool = True

    def __post_init__(self):
        self.markets = tuple(self.markets)
        self.targets = tuple(self.targets)
        self.sources = tuple(self.sources)
        self.methods = tuple(self.methods)
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {ALL_METHODS}")
        if self.synthetic is not None:
            self.markets = tuple(self.synthetic.markets)
        for code in self.targets + self.sources:
            if code not in self.markets:
                raise ConfigError(f"market {code!r} is not among the declared markets {self.markets}")
        if self.workers < 1 or self.repeats < 1:
            raise ConfigError("workers and repeats must be >= 1")
        if self.significance_m is not None and self.significance_m < 1:
            raise ConfigError("significance_m must be >= 1")
        FreezeMask(frozenset(self.forec_freeze))

    @property
    def freeze_mask(self) -> FreezeMask:
        return FreezeMask(frozenset(self.forec_freeze))

    def sources_for(self, target: str) -> list[str]:
        srcs = [s for s in self.sources if s != target]
        if not srcs:
            raise ConfigError(f"no source market available for target {target!r}")
        return srcs

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def seed_key(method: str) -> str:
    """Seed stream of a method; MA variants share their unaware twin's so
    each pair starts from the same weights and sees the same negatives."""
    key = method_key(method)
    return key[3:] if key.startswith("MA-") else key


def derive_seed(master: int, *parts) -> int:
    """Stable per-cell seed from the master seed and a cell key."""
    key = "|".join([str(master), *map(str, parts)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


# -- key-value parsing --------------------------------------------------------


def _as_list(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _as_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _coerce(value: str, typ):
    typ = str(typ)
    if "tuple" in typ:
        return _as_list(value)
    if "bool" in typ:
        return _as_bool(value)
    if value.strip().lower() in ("none", "") and "None" in typ:
        return None
    if "int" in typ and "float" not in typ:
        return int(value)
    if "float" in typ:
        return float(value)
    return value.strip()


def read_config_file(path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    text = Path(path).read_text()
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["experiment"])


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"override {p!r} is not key=value")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(values: Mapping[str, str]) -> ExperimentConfig:
    """ExperimentConfig from flat string key-values."""
    top: dict = {}
    train: dict = {}
    lr: dict = {}
    maml: dict = {}
    synth: dict = {}
    fields = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    train_f = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    maml_f = {f.name: f.type for f in dataclasses.fields(MamlConfig)}
    synth_f = {f.name: f.type for f in dataclasses.fields(SyntheticSpec)}
    try:
        for key, raw in values.items():
            head, _, rest = key.partition(".")
            if head == "train" and rest.startswith("lr."):
                lr[rest[3:]] = float(raw)
            elif head == "train" and rest in train_f:
                train[rest] = _coerce(raw, train_f[rest])
            elif head == "maml" and rest in maml_f:
                maml[rest] = _coerce(raw, maml_f[rest])
            elif head == "synthetic" and rest in synth_f:
                synth[rest] = _coerce(raw, synth_f[rest])
            elif not rest and key in fields and key not in ("train", "maml", "synthetic"):
                top[key] = _coerce(raw, fields[key])
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if lr:
        train["lr"] = {**TrainConfig().lr, **lr}
    seed = top.get("seed", 0)
    train.setdefault("seed", seed)
    maml.setdefault("seed", seed)
    cfg_train = TrainConfig(**train)
    cfg_maml = MamlConfig(**maml)
    spec = None
    if synth or top.get("dataset") in (None, "synthetic"):
        if top.get("dataset") == "synthetic":
            top["dataset"] = None
        if synth or top.get("dataset") is None:
            spec = SyntheticSpec(**synth)
    return ExperimentConfig(train=cfg_train, maml=cfg_maml, synthetic=spec, **top)


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    values = read_config_file(path) if path else {}
    values.update(overrides or {})
    return build_config(values)


def config_from_dict(d: Mapping) -> ExperimentConfig:
    """Inverse of :meth:`ExperimentConfig.to_dict`."""
    d = dict(d)
    train = TrainConfig(**d.pop("train"))
    maml = MamlConfig(**d.pop("maml"))
    synth = d.pop("synthetic")
    spec = None
    if synth is not None:
        synth["markets"] = tuple(synth["markets"])
        spec = SyntheticSpec(**synth)
    d["forec_freeze"] = tuple(d["forec_freeze"])
    return ExperimentConfig(train=train, maml=maml, synthetic=spec, **d)
