"""Run configuration: one YAML file, paper-scale defaults, a desk preset,
and type-checked key=value overrides.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import GRADCHECK_CONFIG, PAPER_CONFIG, TOY_CONFIG, ModelConfig
from .sampling import PITCH_RANGES
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    style: str = "room"
    n_panos: int = 20
    pano_width: int = 1024
    views_per_pano: int = 100
    pitch_preset: str = "indoor"  # indoor -> [-30, 30], outdoor -> [-45, 45]
    fov: float = 90.0
    crop_size: int = 256
    pair_quota: int = 1_000_000
    test_fraction: float = 0.0
    max_dist_m: float = 3.0
    shared_world: bool = False
    spacing_m: float = 2.0

    @property
    def pitch_range(self) -> tuple[float, float]:
        if self.pitch_preset not in PITCH_RANGES:
            raise ConfigError(f"unknown pitch preset {self.pitch_preset!r}")
        return PITCH_RANGES[self.pitch_preset]


@dataclass
class EvalConfig:
    top2: bool = False
    occlusion_window: int = 32
    occlusion_stride: int = 16
    max_roll: float = 5.0


@dataclass
class RunConfig:
    model_preset: str = "paper"  # paper | toy | gradcheck
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def model_config(self) -> ModelConfig:
        presets = {"paper": PAPER_CONFIG, "toy": TOY_CONFIG, "gradcheck": GRADCHECK_CONFIG}
        if self.model_preset not in presets:
            raise ConfigError(f"unknown model preset {self.model_preset!r}")
        return presets[self.model_preset]


def desk_overrides(cfg: RunConfig) -> RunConfig:
    """Shrink everything to CPU scale: tiny dataset, toy model, 2k iterations."""
    cfg.model_preset = "toy"
    cfg.dataset.n_panos = 5
    cfg.dataset.views_per_pano = 5
    cfg.dataset.pano_width = 1024
    cfg.dataset.pair_quota = 50
    cfg.train.batch_size = 10
    cfg.train.total_iters = 2000
    cfg.train.decay_start = 1000
    cfg.train.checkpoint_every = 500
    return cfg


PRESETS = {"desk": desk_overrides, "paper": lambda cfg: cfg}


def _merge_into_dataclass(obj, data: dict, prefix: str = ""):
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {prefix}{key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _merge_into_dataclass(current, value, prefix=f"{prefix}{key}.")
        else:
            setattr(obj, key, _coerce(value, type(current), f"{prefix}{key}"))


def _coerce(value, target_type, key: str):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if target_type in (int, float):
        try:
            out = target_type(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {target_type.__name__}, got {value!r}") from None
        if target_type is int and float(value) != out:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return out
    if target_type is str:
        return str(value)
    if value is None or isinstance(value, target_type):
        return value
    return value


def load_config(path: Path | None = None, preset: str | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then YAML file, then preset, then key=value overrides."""
    cfg = RunConfig()
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        _merge_into_dataclass(cfg, data)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[preset](cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        target = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(target, part)
            if not dataclasses.is_dataclass(target):
                raise ConfigError(f"{key!r} does not name a config field")
        _merge_into_dataclass(target, {parts[-1]: yaml.safe_load(value)},
                              prefix=".".join(parts[:-1]) + "." if parts[:-1] else "")
    return cfg
