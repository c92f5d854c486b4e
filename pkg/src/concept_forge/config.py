"""Experiment configuration loaded from a YAML file.

Unknown keys anywhere in the file are rejected with :class:`ConfigError`.
"""
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import yaml

from .exceptions import ConfigError

MIXING_KINDS = ("linear", "mlp")
TABLE_ROWS = (
    ("linear", 2, 3, 4),
    ("mlp", 2, 3, 4),
    ("linear", 3, 4, 6),
    ("mlp", 3, 4, 6),
    ("linear", 4, 8, 10),
    ("mlp", 4, 8, 10),
)


@dataclass
class WorldConfig:
    n: int = 2
    d_z: int = 3
    d_x: int = 4
    mixing: str = "linear"
    m: Optional[int] = None
    sigma2: float = 0.005
    gmm_components: int = 3
    valuations: str = "anchored"  # or "uniform"
    valuation_scale: float = 0.3
    mixing_hidden: int = 16

    def validate(self):
        if self.mixing not in MIXING_KINDS:
            raise ConfigError(f"world.mixing must be one of {MIXING_KINDS}, got {self.mixing!r}")
        if self.valuations not in ("anchored", "uniform"):
            raise ConfigError("world.valuations must be 'anchored' or 'uniform'")
        if not 1 <= self.n <= self.d_z:
            raise ConfigError("world.n must satisfy 1 <= n <= d_z")
        if self.d_x < self.d_z:
            raise ConfigError("world.d_x must be at least d_z")
        if self.m is not None and self.m < self.n + 1:
            raise ConfigError("world.m must be at least n + 1")
        if self.sigma2 <= 0:
            raise ConfigError("world.sigma2 must be positive")


@dataclass
class SamplerConfig:
    samples_per_env: int = 5000
    budget_factor: float = 1e4

    def validate(self):
        if self.samples_per_env < 1:
            raise ConfigError("sampler.samples_per_env must be positive")


@dataclass
class TrainSection:
    epochs: int = 100
    l1_weight: float = 1e-4
    lr_head: float = 0.5
    lr_encoder: float = 0.005
    batch_size: int = 256
    hidden: List[int] = field(default_factory=lambda: [32, 32])
    encoder: str = "auto"  # "auto" follows the mixing kind

    def validate(self):
        if self.encoder not in ("auto", "linear", "mlp"):
            raise ConfigError("train.encoder must be auto, linear or mlp")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1")
        if self.lr_head <= 0 or self.lr_encoder <= 0:
            raise ConfigError("learning rates must be positive")


@dataclass
class EvalConfig:
    n_samples: int = 5000

    def validate(self):
        if self.n_samples < 3:
            raise ConfigError("eval.n_samples must be at least 3")


@dataclass
class SteerConfig:
    d_act: int = 16
    n_others: int = 4
    n_pairs: int = 100
    n_queries: int = 200
    noise: float = 0.1
    alpha: float = 1.0
    d_emb: int = 8

    def validate(self):
        if self.n_others > self.d_act - 1:
            raise ConfigError("steer.n_others must be below steer.d_act")
        if self.n_pairs < 1 or self.n_queries < 2:
            raise ConfigError("steer needs at least one pair and two queries")


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    steer: SteerConfig = field(default_factory=SteerConfig)
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    rows: Optional[List[Tuple[str, int, int, int]]] = None

    def validate(self):
        for section in (self.world, self.sampler, self.train, self.eval, self.steer):
            section.validate()
        for r in self.grid_rows():
            if len(r) != 4 or r[0] not in MIXING_KINDS:
                raise ConfigError(f"bad grid row {r!r}; expected [mixing, n, d_z, d_x]")
        return self

    def grid_rows(self):
        if self.rows is None:
            w = self.world
            return [(w.mixing, w.n, w.d_z, w.d_x)]
        return [tuple(r) for r in self.rows]

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """Short digest of everything except the seed list."""
        d = self.to_dict()
        d.pop("seeds")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:  # Optional[...]
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        return [_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value)]
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{where} must have {len(args)} entries")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    try:
        if tp is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if tp is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)  # YAML reads "1e-4" as a string
        if tp is str:
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {value!r} as {tp.__name__}") from None
    return value


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where or 'config'}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data):
    return _build(ExperimentConfig, data, "").validate()


def load_config(path=None):
    """Read a YAML config; ``None`` gives the defaults (linear n=2, d_z=3, d_x=4 world)."""
    if path is None:
        return ExperimentConfig().validate()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data)
