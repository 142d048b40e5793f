"""Run configuration: a strict YAML-backed dataclass tree."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .backbones import PointBranchConfig, RgbBranchConfig
from .errors import ConfigError
from .optim import TrainConfig
from .pipeline import PipelineConfig
from .simulate import SCENARIOS


@dataclass
class DataConfig:
    root: str = ""
    split: str = "kitti"        # kitti sequence-number splits, or "all"
    lookahead_m: float = 5.0
    max_step: float = 5.0
    augment: bool = True
    na_threshold: float = 0.5


@dataclass
class SynthConfig:
    scenarios: list[str] = field(default_factory=lambda: list(SCENARIOS))
    frames: int = 50
    width: int = 64
    height: int = 64
    focal: float = 64.0
    n_azimuth: int = 64
    n_elevation: int = 16
    speed: float = 0.5
    yaw_rate_deg: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    data: DataConfig = field(default_factory=DataConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        self.pipeline.validate()
        self.train.validate()
        if self.data.split not in ("kitti", "all"):
            raise ConfigError(f"unknown split mode {self.data.split!r}")
        for s in self.synth.scenarios:
            if s not in SCENARIOS:
                raise ConfigError(f"unknown scenario {s!r}")
        # single source of truth for values shared across modules
        self.pipeline.dropout_rate = self.train.dropout_rate
        self.pipeline.max_step = self.data.max_step
        return self


def _from_dict(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping at {path or 'config root'}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'root'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(f.type) or (isinstance(f.type, str)
                                                and f.type in _NESTED):
            kwargs[name] = _from_dict(_NESTED[f.type if isinstance(f.type, str) else f.type.__name__],
                                      value, sub)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    "DataConfig": DataConfig,
    "SynthConfig": SynthConfig,
    "PipelineConfig": PipelineConfig,
    "TrainConfig": TrainConfig,
    "RgbBranchConfig": RgbBranchConfig,
    "PointBranchConfig": PointBranchConfig,
}


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def config_to_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data).validate()


def load_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config: {e}") from None
    if data is None:
        data = {}
    return config_from_dict(data)
