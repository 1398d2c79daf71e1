"""Run configuration: four TOML sections, every key required, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

CONFIDENCE_MODES = ("embed", "multiply", "none")
LOSSES = ("softmax", "bce")


class ConfigError(ValueError):
    """Invalid, incomplete or inconsistent configuration."""


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_steps: int = 12
    max_ocr: int = 8
    max_objects: int = 4
    f_obj: int = 32
    f_ocr: int = 32
    f_ft: int = 32
    confidence_mode: str = "embed"
    init_std: float = 0.02
    ln_eps: float = 1e-5
    subword_seed: int = 0

    def __post_init__(self):
        for name in ("d", "layers", "heads", "ffn_dim", "max_steps", "max_ocr", "max_objects",
                     "f_obj", "f_ocr", "f_ft"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.d % self.heads:
            raise ConfigError(f"model.d={self.d} is not divisible by model.heads={self.heads}")
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise ConfigError(f"model.confidence_mode must be one of {CONFIDENCE_MODES}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    decay_steps: tuple = (5000, 7000)
    decay_factor: float = 0.1
    total_iters: int = 12000
    batch_size: int = 32
    eval_every: int = 500
    seed: int = 0
    loss: str = "softmax"

    def __post_init__(self):
        object.__setattr__(self, "decay_steps", tuple(int(s) for s in self.decay_steps))
        steps = self.decay_steps
        if any(b <= a for a, b in zip(steps, steps[1:])) or any(s <= 0 for s in steps):
            raise ConfigError("train.decay_steps must be positive and strictly increasing")
        for name in ("lr", "decay_factor", "total_iters", "batch_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"train.loss must be one of {LOSSES}")


@dataclass(frozen=True)
class DataConfig:
    val_fraction: float = 0.1
    min_count: int = 10
    c_default: float = 0.90

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("data.val_fraction must be in (0, 1)")
        if self.min_count < 1:
            raise ConfigError("data.min_count must be >= 1")
        if not 0.0 <= self.c_default <= 1.0:
            raise ConfigError("data.c_default must be in [0, 1]")


@dataclass(frozen=True)
class DecodeConfig:
    common_threshold: int = 20
    use_mask: bool = True

    def __post_init__(self):
        if self.common_threshold < 0:
            raise ConfigError("decode.common_threshold must be >= 0")


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def to_dict(self) -> dict:
        out = {}
        for sec in fields(self):
            values = dataclasses.asdict(getattr(self, sec.name))
            out[sec.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
        return out

    def replace(self, section: str, **changes) -> "Config":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig, "decode": DecodeConfig}


def _coerce(section: str, f: dataclasses.Field, value: Any):
    key = f"{section}.{f.name}"
    default = f.default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def config_from_dict(raw: dict) -> Config:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    built = {}
    for section, cls in _SECTIONS.items():
        values = raw.get(section)
        if values is None:
            raise ConfigError(f"missing config section [{section}]")
        names = {f.name for f in fields(cls)}
        extra = set(values) - names
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(f'{section}.{k}' for k in sorted(extra))}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                raise ConfigError(f"missing config key {section}.{f.name}")
            kwargs[f.name] = _coerce(section, f, values[f.name])
        built[section] = cls(**kwargs)
    return Config(**built)


def load_config(path) -> Config:
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)


def dump_config(cfg: Config) -> str:
    """Serialize to TOML that :func:`load_config` reads back unchanged."""
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)
