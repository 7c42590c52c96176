"""Run configuration: nested dataclasses read from ``key = value`` files.

Keys are dotted paths (``model.encoder.channels = 32``); a ``[section]``
header prefixes the keys that follow it. Every field has a default and
unknown keys are rejected by name.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .encoder import AttentionConfig, EncoderConfig
from .errors import ConfigError
from .model import ModelConfig, SelfSupConfig
from .relation import RelationConfig


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | records
    n_classes: int = 8
    clips_per_class: int = 20
    clip_shape: tuple[int, int, int, int] = (3, 8, 32, 32)
    noise: float = 0.05
    data_seed: int = 0
    split_counts: tuple[int, int, int] | None = None
    patterns: tuple[str, ...] | None = None  # synthetic motion patterns, default the first n_classes
    manifest: str = ""
    records_root: str = ""
    n_frames: int = 20
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.source not in ("synthetic", "records"):
            raise ConfigError(f"data.source must be 'synthetic' or 'records', got {self.source!r}")
        self.clip_shape = tuple(self.clip_shape)
        if isinstance(self.patterns, str):
            self.patterns = (self.patterns,)


@dataclass
class ProtocolConfig:
    way: int = 5
    shot: int = 1
    queries: int = 5
    episodes: int = 600
    train_split: str = "train"
    eval_split: str = "test"

    def __post_init__(self):
        if self.way < 1 or self.shot < 1 or self.queries < 1:
            raise ConfigError("way, shot and queries must be positive")
        if self.episodes < 2:
            raise ConfigError("protocol.episodes must be at least 2")

    @property
    def name(self) -> str:
        return f"{self.way}-way-{self.shot}-shot"


@dataclass
class OptimConfig:
    lr: float = 1e-3
    steps: int = 2000
    seed: int = 0
    clip_norm: float | None = None
    stop_accuracy: float | None = None
    stop_window: int = 50
    log_every: int = 1

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 0:
            raise ConfigError("optim.lr must be positive and optim.steps non-negative")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    @property
    def seed(self) -> int:
        return self.optim.seed


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        pass
    if "," in raw:
        return tuple(_parse_value(p) for p in raw.split(",") if p.strip())
    return raw


def _coerce(value: Any, current: Any, key: str) -> Any:
    if isinstance(value, list):
        value = tuple(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, int):
        return value
    if isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(current, tuple) and isinstance(value, (int, float)):
        return (value,)
    return value


def _flatten(obj, prefix: str = "") -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Return a new config with dotted-key overrides applied and re-validated."""
    known = _flatten(cfg)
    for key in overrides:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")

    def rebuild(obj, prefix: str):
        kwargs = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(v):
                kwargs[f.name] = rebuild(v, key + ".")
            elif key in overrides:
                kwargs[f.name] = _coerce(overrides[key], v, key)
            else:
                kwargs[f.name] = v
        try:
            return type(obj)(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc

    return rebuild(cfg, "")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    overrides: dict[str, Any] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        full = f"{section}.{key}" if section else key
        overrides[full] = _parse_value(value)
    return apply_overrides(base or RunConfig(), overrides)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in _flatten(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value) + ("," if len(value) == 1 else "")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


__all__ = [
    "AttentionConfig",
    "DataConfig",
    "EncoderConfig",
    "ModelConfig",
    "OptimConfig",
    "ProtocolConfig",
    "RelationConfig",
    "RunConfig",
    "SelfSupConfig",
    "apply_overrides",
    "dump_config",
    "load_config",
    "parse_config",
]
