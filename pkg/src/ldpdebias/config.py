"""Experiment configuration: defaults, INI-style files, and hashing.

The file format is configparser INI with three sections (privacy, data,
train). Missing keys fall back to defaults so a config file only needs
to state what it changes; unknown keys are rejected so typos fail loudly
instead of silently running the default. Every output file the CLI
writes embeds config_hash() of the resolved configuration, which makes
artifacts traceable to the exact settings that produced them.

Two sentinel values avoid baking data-dependent choices into files:
feature_norm_bound = 0 resolves to sqrt(p) (the tight bound for data in
[-1, 1]^p), and radius = 0 resolves to 10x the clean ridge norm at
train time. truncation = -1 leaves the logistic series order to the
per-call default rule.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .losses import ExponentialLoss, GlmLoss, LogisticLoss, QuadraticLoss
from .mechanisms import PrivacyBudget

__all__ = [
    "ExperimentConfig",
    "desk_preset",
    "load_config",
    "save_config",
    "config_hash",
    "make_loss",
    "make_budget",
]

_SECTIONS = {
    "privacy": ("epsilon_x", "epsilon_y", "delta", "feature_norm_bound"),
    "data": ("n", "p", "class_separation", "label_balance", "test_fraction", "seed"),
    "train": (
        "loss",
        "step_size",
        "schedule",
        "batch_size",
        "lam",
        "radius",
        "n_seeds",
        "truncation",
    ),
}

_LOSSES = ("quadratic", "exponential", "logistic")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment settings; defaults match the reference protocol."""

    epsilon_x: float = 1.0
    epsilon_y: float = 1.0
    delta: float = 1e-5
    feature_norm_bound: float = 0.0

    n: int = 1_000_000
    p: int = 2
    class_separation: float = 2.0
    label_balance: float = 0.5
    test_fraction: float = 0.2
    seed: int = 0

    loss: str = "exponential"
    step_size: float = 1e-4
    schedule: str = "constant"
    batch_size: int = 128
    lam: float = 5.0
    radius: float = 0.0
    n_seeds: int = 100
    truncation: int = -1

    def __post_init__(self):
        if self.loss not in _LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {_LOSSES}")
        if self.n_seeds < 1:
            raise ConfigError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if self.feature_norm_bound < 0:
            raise ConfigError(
                f"feature_norm_bound must be >= 0 (0 means auto), got {self.feature_norm_bound}"
            )
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0 (0 means auto), got {self.radius}")

    def resolved_norm_bound(self) -> float:
        return self.feature_norm_bound if self.feature_norm_bound > 0 else math.sqrt(self.p)


def desk_preset(cfg: ExperimentConfig) -> ExperimentConfig:
    """Shrink a config to desk scale: n = 1e5 and 20 seeds."""
    return replace(cfg, n=100_000, n_seeds=20)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(path) -> ExperimentConfig:
    """Read an INI config; missing keys default, unknown keys raise."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    return ExperimentConfig(**values)


def _serialize(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(cfg, key)
            parser[section][key] = repr(value) if isinstance(value, float) else str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(_serialize(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """Short stable digest of the full resolved configuration."""
    canonical = ";".join(
        f"{key}={getattr(cfg, key)!r}" for section in _SECTIONS.values() for key in section
    )
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def make_loss(cfg: ExperimentConfig) -> GlmLoss:
    if cfg.loss == "quadratic":
        return QuadraticLoss()
    if cfg.loss == "exponential":
        return ExponentialLoss()
    return LogisticLoss(truncation=None if cfg.truncation < 0 else cfg.truncation)


def make_budget(cfg: ExperimentConfig) -> PrivacyBudget:
    return PrivacyBudget(
        epsilon_x=cfg.epsilon_x,
        epsilon_y=cfg.epsilon_y,
        delta=cfg.delta,
        feature_norm_bound=cfg.resolved_norm_bound(),
    )
