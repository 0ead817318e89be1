"""Run configuration: a YAML key-value file mapped onto nested dataclasses."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .attacks import TARGETS
from .base import BaseTrainConfig
from .head import LossConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_classes: int = 10
    input_dim: int = 2
    per_class_train: int = 500
    per_class_test: int = 100
    spread: float = 0.01
    ood_n: int = 1000
    ood_kinds: list[str] = field(default_factory=lambda: ["uniform", "shifted_clusters"])
    ood_clusters: int = 4
    ood_min_distance: float = 0.15


@dataclass
class BaseConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3


@dataclass
class HeadConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    margin: float = 10.0
    batch_size: int = 64
    epochs: int = 40
    lr: float = 1e-3
    rep_dim: int = 64
    hidden: int = 64


@dataclass
class AttackGrid:
    epsilons: list[float] = field(default_factory=lambda: [0.02, 0.05, 0.10])
    step_size: float = 0.01
    iterations: int = 40
    target: str = "base_ce"


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    base: BaseConfig = field(default_factory=BaseConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    percentiles: list[float] = field(default_factory=lambda: [1.0, 2.0])
    severities: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    attack: AttackGrid = field(default_factory=AttackGrid)
    output_dir: str = "runs/default"

    def base_train_config(self) -> BaseTrainConfig:
        return BaseTrainConfig(self.base.epochs, self.base.batch_size, self.base.lr, self.seed)

    def loss_config(self) -> LossConfig:
        h = self.head
        return LossConfig(h.alpha, h.beta, h.gamma, h.margin, h.batch_size, h.epochs, h.lr, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> RunConfig:
        d = self.data
        if d.n_classes < 2:
            raise ConfigError("data.n_classes must be >= 2")
        if min(d.per_class_train, d.per_class_test, d.input_dim, d.ood_n) < 1:
            raise ConfigError("data sizes must be positive")
        if not d.spread > 0:
            raise ConfigError("data.spread must be positive")
        unknown = set(d.ood_kinds) - {"uniform", "shifted_clusters"}
        if unknown:
            raise ConfigError(f"unknown ood kinds {sorted(unknown)}")
        if any(not 0 < p <= 100 for p in self.percentiles) or not self.percentiles:
            raise ConfigError("percentiles must be a non-empty list in (0, 100]")
        if any(s not in range(1, 6) for s in self.severities):
            raise ConfigError("severities must be in 1..5")
        if self.attack.target not in TARGETS:
            raise ConfigError(f"attack.target must be one of {TARGETS}")
        if any(e < 0 for e in self.attack.epsilons):
            raise ConfigError("attack epsilons must be >= 0")
        if self.head.rep_dim < 1 or self.head.hidden < 1:
            raise ConfigError("head.rep_dim and head.hidden must be positive")
        try:
            self.loss_config()
        except ValueError as exc:
            raise ConfigError(f"head: {exc}") from None
        return self


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    extra = set(raw) - set(known)
    if extra:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(extra)}")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(cls(), name)
        key = f"{where}.{name}".lstrip(".")
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = _coerce(default, value, key)
    return cls(**kwargs)


def _coerce(default, value, key: str):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError
            return int(float(value))
        if isinstance(default, float):
            # YAML 1.1 reads "1e-3" as a string
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, list):
                raise TypeError
            return [_coerce(default[0], v, key) for v in value] if default else list(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid value {value!r}") from None
    return value


def config_from_dict(raw: dict | None) -> RunConfig:
    return _build(RunConfig, raw or {}, "").validate()


def load_config(path: os.PathLike | str | None) -> tuple[RunConfig, str]:
    """Parse a config file; returns the config and the file's verbatim text."""
    if path is None:
        return RunConfig().validate(), ""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw), text


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
