"""Run configuration: one JSON file plus command-line overrides.

Every field has a default, so an empty file (or none) is a valid config.
Overrides use dotted keys, e.g. ``segment.sigma=32`` or
``train.algorithm=lm``; values are parsed as JSON when possible.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .classify import TrainConfig
from .segment import SegParams
from .surf import DetectorParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterParams:
    """Isolated-feature removal before training."""

    k: int = 5
    quantile: float = 0.95

    def __post_init__(self):
        if self.k < 1 or not 0.0 < self.quantile <= 1.0:
            raise ValueError(f"invalid filter parameters {self}")


@dataclass(frozen=True)
class TrackParams:
    match_radius: float = 60.0  # pixels
    match_threshold: float = 0.25  # descriptor distance
    ransac_tol: float = 1.0  # Sampson distance, pixels
    ransac_confidence: float = 0.99
    ransac_max_iters: int = 2000
    dt: float = 1.0  # seconds between frames
    enabled: bool = True

    def __post_init__(self):
        if self.match_radius <= 0 or self.match_threshold <= 0 or self.ransac_tol <= 0 or self.dt <= 0:
            raise ValueError(f"invalid tracking parameters {self}")
        if not 0.0 < self.ransac_confidence < 1.0 or self.ransac_max_iters < 1:
            raise ValueError(f"invalid RANSAC parameters {self}")


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 128.0
    cy: float = 128.0
    skew: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Config:
    detector: DetectorParams = field(default_factory=DetectorParams)
    classifier: str = "nn"  # "nn" or "mlp"
    nn_tau: float | None = None  # None: median 1-NN distance of the training set
    train: TrainConfig = field(default_factory=TrainConfig)
    filter: FilterParams = field(default_factory=FilterParams)
    segment: SegParams = field(default_factory=SegParams)
    track: TrackParams = field(default_factory=TrackParams)
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    seed: int = 0

    def __post_init__(self):
        if self.classifier not in ("nn", "mlp"):
            raise ValueError(f"classifier must be 'nn' or 'mlp', got {self.classifier!r}")
        if self.nn_tau is not None and self.nn_tau <= 0:
            raise ValueError("nn_tau must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["hidden"] = list(d["train"]["hidden"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def derive_seed(self, *names: str | int) -> int:
        return derive_seed(self.seed, *names)


def _check_scalar(default, value, where: str):
    """Reject values whose JSON type cannot stand in for the default."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or default is None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) or (default is None and value is None)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: {value!r} has the wrong type")
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        sub = f"{where}.{name}" if where else name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            kwargs[name] = _check_scalar(default, value, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def from_dict(data: dict) -> Config:
    return _build(Config, data, "")


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> Config:
    """Read ``path`` (JSON) if given, then apply ``key=value`` overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
        node[parts[-1]] = value
    return from_dict(data)


def with_overrides(cfg: Config, **changes) -> Config:
    return replace(cfg, **changes)


def derive_seed(root: int, *names: str | int) -> int:
    """Independent 32-bit seed for a named component of a run."""
    key = [int(root) & 0xFFFFFFFF]
    for n in names:
        key.append(zlib.crc32(n.encode()) if isinstance(n, str) else int(n) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(key).generate_state(1)[0])
