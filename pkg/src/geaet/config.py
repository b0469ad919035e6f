"""Run configuration: nested dataclasses, JSON files and dotted overrides."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import ModelConfig


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending key path."""


@dataclass
class DatasetConfig:
    kind: str = "tree"  # tree | sbm | jsonl
    r: int = 3
    count: int = 2000
    n_per_cluster: int = 20
    clusters: int = 6
    p_in: float = 0.55
    p_out: float = 0.25
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 0
    path: str | None = None


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    warmup_epochs: int = 5
    epochs: int = 100
    batch_size: int = 32
    eval_batch_size: int = 256
    eval_train: bool = False


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0

    def validate(self) -> None:
        d, o = self.dataset, self.optim
        if d.kind not in ("tree", "sbm", "jsonl"):
            raise ConfigError(f"dataset.kind: expected tree, sbm or jsonl, got {d.kind!r}")
        if d.kind == "jsonl" and not d.path:
            raise ConfigError("dataset.path: required when dataset.kind is 'jsonl'")
        if d.kind == "tree" and d.r < 2:
            raise ConfigError("dataset.r: must be at least 2")
        if d.kind == "sbm" and not (0 <= d.p_out < d.p_in <= 1):
            raise ConfigError("dataset.p_in/p_out: need 0 <= p_out < p_in <= 1")
        if d.count < 1:
            raise ConfigError("dataset.count: must be positive")
        if len(d.split) != 3 or abs(sum(d.split) - 1.0) > 1e-9 or min(d.split) < 0:
            raise ConfigError("dataset.split: three nonnegative fractions summing to 1")
        if o.epochs < 1 or not (0 <= o.warmup_epochs < o.epochs):
            raise ConfigError("optim.warmup_epochs: need 0 <= warmup_epochs < epochs")
        if o.lr <= 0 or o.weight_decay < 0:
            raise ConfigError("optim.lr must be positive and optim.weight_decay nonnegative")
        if o.batch_size < 1 or o.eval_batch_size < 1:
            raise ConfigError("optim.batch_size: must be positive")
        try:
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (item,) = typing.get_args(tp)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp}")


def from_dict(cls, data: dict[str, Any], path: str = ""):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path.rstrip('.') or '<root>'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}{key}: unknown key")
    kwargs = {}
    for key, value in data.items():
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = from_dict(tp, value, f"{path}{key}.")
        else:
            kwargs[key] = _coerce(tp, value, f"{path}{key}")
    return cls(**kwargs)


def to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` strings; values are parsed as JSON when possible."""
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for i, part in enumerate(parts):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"{'.'.join(parts[: i + 1])}: unknown key")
            if i == len(parts) - 1:
                node[part] = _parse_value(raw)
            else:
                node = node[part]
    return out


def _merge(base: dict[str, Any], update: dict[str, Any], path: str = "") -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigError(f"{path}{key}: unknown key")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve(data: dict[str, Any] | None = None, overrides: list[str] = ()) -> RunConfig:
    """Defaults, then ``data``, then overrides; validated."""
    merged = _merge(to_dict(RunConfig()), data or {})
    merged = apply_overrides(merged, list(overrides))
    cfg = from_dict(RunConfig, merged)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    data = None
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve(data, overrides)


def with_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    items = [f"{k}={json.dumps(v)}" for k, v in overrides.items()]
    return resolve(to_dict(cfg), items)


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
