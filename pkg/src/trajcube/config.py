"""Run configuration: YAML (or JSON) files validated against a schema.

Every field has a default, so an empty file is a complete configuration.
Unknown keys and wrongly typed values are rejected with the offending path.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from .featurecube import GridParams
from .inference import KalmanConfig
from .mdnrnn.network import ModelConfig
from .mdnrnn.train import TrainConfig
from .synth import SynthConfig


@dataclass(frozen=True)
class MatchConfig:
    dx: float = 2.0
    dy: float = 2.0
    nx: int = 20
    ny: int = 20
    ab: float = 20000.0
    tb: float = 3600.0

    @property
    def grid(self) -> GridParams:
        return GridParams(self.dx, self.dy, self.nx, self.ny)


@dataclass(frozen=True)
class DataConfig:
    plan_alpha: float = 1.0
    train_fraction: float = 0.8
    split_seed: int = 0


@dataclass(frozen=True)
class PredictConfig:
    warmup: int = 20
    kalman: KalmanConfig = field(default_factory=KalmanConfig)


@dataclass(frozen=True)
class Config:
    synth: SynthConfig = field(default_factory=SynthConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)

    def __post_init__(self):
        want = (self.match.nx, self.match.ny, 4)
        if tuple(self.model.cube_shape) != want:
            raise ValueError(f"model.cube_shape {tuple(self.model.cube_shape)} does not match the grid {want}")

    def to_json(self) -> dict:
        return _to_plain(self)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


_NUMBER = {"type": "number"}
_ARRAY = {"type": "array"}


def _field_schema(tp, default):
    if dataclasses.is_dataclass(tp):
        return schema_for(tp)
    origin = typing.get_origin(tp)
    if origin is typing.Union:  # Optional[...]
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return {"anyOf": [_field_schema(args[0], default), {"type": "null"}]}
    if tp is bool:
        return {"type": "boolean"}
    if tp is int:
        return {"type": "integer"}
    if tp is float:
        return _NUMBER
    if tp is str:
        return {"type": "string"}
    if tp is tuple or origin is tuple:
        return _ARRAY
    return {}


def schema_for(cls) -> dict:
    hints = typing.get_type_hints(cls)
    props = {}
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else None
        props[f.name] = _field_schema(hints[f.name], default)
    return {"type": "object", "properties": props, "additionalProperties": False}


def _build(cls, data: dict):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            value = _build(tp, value or {})
        elif tp is tuple and isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif tp is float and isinstance(value, int):
            value = float(value)
        kwargs[f.name] = value
    return cls(**kwargs)


class ConfigError(ValueError):
    pass


def config_from_dict(data) -> Config:
    data = {} if data is None else data
    try:
        jsonschema.validate(data, schema_for(Config))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    try:
        return _build(Config, data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config error: {exc}") from None


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML/JSON: {exc}") from None
    return config_from_dict(data)
