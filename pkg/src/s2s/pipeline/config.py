"""Flat key=value experiment configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..embedding.train import TrainConfig
from ..meshmetrics import DEFAULT_DENSITY, SliceSpec
from ..regress import KernelSpec


@dataclass
class ExperimentConfig:
    # synthesis
    count: int = 300
    seed: int = 0
    resolution: int = 64
    stddev: float = 1.0
    margin: float = 0.05
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    split_seed: int = 1234
    # anthropometry
    density: float = DEFAULT_DENSITY
    cut_spacing: float = 0.005
    hip_fraction: float = 0.52
    waist_fraction: float = 0.62
    bust_fraction: float = 0.72
    # autoencoder
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-4
    ae_seed: int = 0
    channels: int = 32
    single_thread: bool = True
    # regression
    krr_degree: int = 3
    krr_lambda: float = 0.1
    krr_offset: float = 1.0
    krr_scale: float = 0.0  # 0 -> 1 / feature dimension

    def slice_spec(self) -> SliceSpec:
        return SliceSpec("y", self.cut_spacing, self.hip_fraction, self.waist_fraction, self.bust_fraction)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
            seed=self.ae_seed, channels=self.channels, single_thread=self.single_thread,
        )

    def kernel(self) -> KernelSpec:
        return KernelSpec(self.krr_degree, self.krr_scale or None, self.krr_offset)

    def updated(self, **overrides) -> "ExperimentConfig":
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise KeyError(f"unknown config keys: {sorted(bad)}")
        return dataclasses.replace(self, **{k: _coerce(self, k, v) for k, v in overrides.items()})

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def _coerce(cfg, key, value):
    kind = type(getattr(cfg, key))
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    if kind is bool:
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return bool(value)
    return kind(value)


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        cfg = cfg.updated(**parse_config_text(Path(path).read_text()))
    return cfg.updated(**{k: v for k, v in overrides.items() if v is not None})


def write_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_text())
