"""Run configuration as flat dotted keys (``section.field``) over typed sections."""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec
from .dfc import GraphConfig, WindowConfig
from .evaluation import EvalConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InterpretConfig:
    layer: int = -1
    top_k: int = 20


@dataclass(frozen=True)
class DataConfig:
    dir: str = ""
    labels: str = ""
    roi_names: str = ""


@dataclass(frozen=True)
class RunConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    interpret: InterpretConfig = field(default_factory=InterpretConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def to_flat(self) -> dict:
        flat = {}
        for sec in dataclasses.fields(self):
            section = getattr(self, sec.name)
            for f in dataclasses.fields(section):
                value = getattr(section, f.name)
                flat[f"{sec.name}.{f.name}"] = list(value) if isinstance(value, tuple) else value
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        sections = {sec.name: sec for sec in dataclasses.fields(cls)}
        grouped: dict[str, dict] = {name: {} for name in sections}
        for key, raw in flat.items():
            sec_name, _, fname = key.partition(".")
            if sec_name not in sections or not fname:
                raise ConfigError(f"unknown config key {key!r}")
            sec_type = sections[sec_name].default_factory
            hints = typing.get_type_hints(sec_type)
            if fname not in {f.name for f in dataclasses.fields(sec_type)}:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                grouped[sec_name][fname] = _coerce(raw, hints[fname])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})") from None
        built = {}
        for name, sec in sections.items():
            try:
                built[name] = sec.default_factory(**grouped[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name} settings: {exc}") from None
        return cls(**built)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        flat = self.to_flat()
        flat.update(overrides)
        return RunConfig.from_flat(flat)

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True)


def _coerce(raw, hint):
    origin = typing.get_origin(hint)
    if origin is tuple:
        (inner, *_rest) = typing.get_args(hint)
        if isinstance(raw, str):
            raw = [p for p in raw.replace("[", "").replace("]", "").split(",") if p.strip()]
        return tuple(_coerce(x, inner) for x in raw)
    if hint is bool:
        if isinstance(raw, str):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError("expected a boolean")
        return bool(raw)
    if hint is int:
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError("expected an integer")
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return str(raw)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return _coerce(raw, args[0])
    return raw


def parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    flat = {}
    if path:
        try:
            flat = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(flat, dict):
            raise ConfigError(f"{path}: expected a JSON object of dotted keys")
    cfg = RunConfig().with_overrides(flat)
    return cfg.with_overrides(overrides or {})
