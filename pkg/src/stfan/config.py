"""Strict JSON experiment configs with dotted-key overrides.

Every key is validated against the dataclass it lands in; an unknown key or
a mistyped value raises :class:`ConfigError` carrying the full dotted path.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import VARIANTS, ModelConfig
from .train import FILTER_SIZES, TrainConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass
class AblateConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    variants: tuple[str, ...] = VARIANTS
    filter_sizes: tuple[int, ...] = FILTER_SIZES

    def __post_init__(self):
        self.seeds = tuple(self.seeds)
        self.variants = tuple(self.variants)
        self.filter_sizes = tuple(self.filter_sizes)
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValueError(f"unknown variants {bad}")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(k=3, base_channels=8))
    train: TrainConfig = field(default_factory=TrainConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, tp, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is typing.Union or origin is types.UnionType:
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, path)
            except ConfigError:
                continue
        raise ConfigError(path, f"value {value!r} does not match {tp}")
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: Any, path: str = ""):
    """Build dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(_join(path, key), f"unknown key (valid: {', '.join(sorted(names))})")
    kwargs = {k: _coerce(v, hints[k], _join(path, k)) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def parse_value(text: str) -> Any:
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: dict[str, Any]) -> dict:
    out = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        keys = dotted.split(".")
        node = out
        for i, k in enumerate(keys[:-1]):
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ConfigError(".".join(keys[: i + 1]), "cannot override inside a non-object value")
            node = nxt
        node[keys[-1]] = value
    return out


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read ``path`` (or start from defaults), apply overrides, validate."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("", f"expected a JSON object at the top level, got {type(data).__name__}")
    if overrides:
        data = apply_overrides(data, overrides)
    # partial sections fall back to the experiment defaults, not the bare dataclass defaults
    return from_dict(ExperimentConfig, _merge(ExperimentConfig().to_dict(), data))


def _merge(base, update):
    if isinstance(base, dict) and isinstance(update, dict):
        out = dict(base)
        for k, v in update.items():
            out[k] = _merge(base[k], v) if k in base else v
        return out
    return update
