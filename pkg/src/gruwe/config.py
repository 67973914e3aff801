"""File-backed run configuration.

A config is a JSON object whose keys are the fields of :class:`TrainConfig`.
Unknown keys are rejected. ``--set key=value`` overrides parse ``value`` as
JSON when possible and fall back to a plain string.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class TrainConfig:
    task: str = "forecast"
    data_path: str | None = None
    input_dim: int | None = None
    num_types: int | None = None
    hidden_dim: int = 16
    output_dim: int | None = None
    seed: int = 0
    epochs: int = 10
    lr: float = 0.01
    lr_decay: float = 0.99
    clip_norm: float = 1.0
    batch_size: int = 1
    workers: int = 1
    mc_samples: int = 20
    observe_fraction: float = 0.5
    prefix_loss: bool = False
    standardize: bool = True
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_seed: int | None = None
    hmax_multiplier: float = 20.0
    grid_size: int = 500
    eval_seed: int = 0
    checkpoint_path: str = "checkpoint.json"
    report_path: str = "train_report.json"

    def __post_init__(self):
        self.validate()

    def validate(self):
        def integer(name, lo, optional=False):
            v = getattr(self, name)
            if v is None and optional:
                return
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")

        def real(name, lo, lo_open=True, hi=None):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
            if (v <= lo) if lo_open else (v < lo):
                raise ConfigError(f"{name} must be {'>' if lo_open else '>='} {lo}, got {v}")
            if hi is not None and v > hi:
                raise ConfigError(f"{name} must be <= {hi}, got {v}")

        if self.task not in ("forecast", "tpp"):
            raise ConfigError(f"task must be 'forecast' or 'tpp', got {self.task!r}")
        for name in ("input_dim", "num_types", "output_dim"):
            integer(name, 1, optional=True)
        integer("hidden_dim", 1)
        integer("seed", 0)
        integer("epochs", 1)
        integer("batch_size", 1)
        integer("workers", 1)
        integer("mc_samples", 1)
        integer("grid_size", 2)
        integer("eval_seed", 0)
        integer("split_seed", 0, optional=True)
        real("lr", 0.0, lo_open=False)
        real("lr_decay", 0.0, hi=1.0)
        real("clip_norm", 0.0)
        real("observe_fraction", 0.0, hi=1.0)
        real("hmax_multiplier", 0.0)
        for name in ("prefix_loss", "standardize"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be true or false")
        r = self.split_ratios
        if (not isinstance(r, (list, tuple)) or len(r) != 3
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x >= 0 for x in r)
                or sum(r) <= 0 or r[0] <= 0):
            raise ConfigError(f"split_ratios must be [train, val, test] with train > 0, got {r!r}")
        for name in ("data_path", "checkpoint_path", "report_path"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, str):
                raise ConfigError(f"{name} must be a string path")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def effective_split_seed(self) -> int:
        return self.seed if self.split_seed is None else self.split_seed


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path=None, overrides=()) -> TrainConfig:
    d = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                d = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    for item in overrides:
        key, value = parse_override(item)
        d[key] = value
    return TrainConfig.from_dict(d)
