"""Run configuration: dataclass sections, strict JSON loading, dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .data import SyntheticTaskSpec
from .discriminator import DiscriminatorConfig
from .errors import ArgumentError
from .generator import GeneratorConfig
from .weightnet import WeightNetConfig


class ConfigError(ArgumentError):
    pass


_CHOICES = {
    "generator": ("cc", "spade"),
    "predictor": ("fp", "local"),
    "discriminator": ("fpse", "ms-patch"),
}


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    steps: int = 3000
    seed: int = 0
    lambda_p: float = 10.0
    lambda_fm: float = 20.0
    d_steps: int = 1  # discriminator updates per generator update
    # ablation axes
    generator: str = "cc"
    predictor: str = "fp"
    discriminator: str = "fpse"
    embeddings: bool = True
    checkpoint_every: int = 1000
    sample_every: int = 500
    extractor_seed: int = 1234

    def __post_init__(self):
        if isinstance(self.embeddings, str):
            if self.embeddings not in ("on", "off"):
                raise ConfigError(f"embeddings must be on/off, got {self.embeddings!r}")
            self.embeddings = self.embeddings == "on"
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"train.{key} must be one of {allowed}")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.batch_size <= 0 or self.steps < 0 or self.d_steps <= 0:
            raise ConfigError("batch_size and d_steps must be positive, steps non-negative")


@dataclass
class DatasetConfig:
    train_count: int = 200
    eval_count: int = 50
    train_seed: int = 0
    eval_seed: int = 1


@dataclass
class Config:
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    weightnet: WeightNetConfig = field(default_factory=WeightNetConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        kwargs = {}
        section_cls = {name: type(value) for name, value in vars(cls()).items()}
        for key, value in raw.items():
            if key not in section_cls:
                raise ConfigError(f"unknown config section {key!r}")
            kwargs[key] = _build(section_cls[key], value, key)
        return cls(**kwargs)

    def with_overrides(self, overrides: Iterable[str]) -> "Config":
        raw = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, value = item.split("=", 1)
            parts = key.strip().split(".")
            if len(parts) != 2 or parts[0] not in raw:
                raise ConfigError(f"unknown config key {key!r}")
            section, name = parts
            if name not in raw[section]:
                raise ConfigError(f"unknown config key {key!r}")
            raw[section][name] = _parse_value(value.strip(), raw[section][name])
        return Config.from_dict(raw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, value, where: str):
    if not isinstance(value, dict):
        raise ConfigError(f"section {where!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(value) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {unknown}")
    try:
        return cls(**value)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where!r}: {exc}") from exc


def _parse_value(text: str, current: Any):
    if isinstance(current, bool):
        low = text.lower()
        if low in ("true", "on", "1", "yes"):
            return True
        if low in ("false", "off", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    try:
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, str):
            return text
        return json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r}: {exc}") from exc


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> Config:
    if path is None:
        cfg = Config()
    else:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"no such config file: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        cfg = Config.from_dict(raw)
    return cfg.with_overrides(overrides)
