"""Pipeline configuration loaded from a YAML key-value file.

Relative paths resolve against the directory holding the config file.
Every tolerance and basis size has a default; a minimal config only needs
``workdir`` and the ``data`` paths.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from hubwind.shear import AdditiveConfig


@dataclass
class DataPaths:
    stations: str = "data/stations.csv"
    winds_10m: str = "data/winds_10m.csv"
    reanalysis: str = "data/reanalysis.csv"
    targets: str = "data/targets.csv"
    farm_obs: str | None = "data/farm_obs.csv"
    baseline: str | None = "data/baseline_hourly.csv"
    gwa_grid: str | None = None


@dataclass
class ShearSettings:
    k_wind: int = 20
    k_height: int = 8
    k_tensor: int = 6
    lambda_min: float = 1e-6
    lambda_max: float = 1e6
    n_lambda: int = 7
    sweeps: int = 2
    ridge: float = 1e-8
    harmonics: int = 2
    holdout_fraction: float = 0.2

    def additive(self) -> AdditiveConfig:
        grid = tuple(np.logspace(np.log10(self.lambda_min), np.log10(self.lambda_max), self.n_lambda))
        return AdditiveConfig(self.k_wind, self.k_height, self.k_tensor, grid, self.sweeps, self.ridge)


@dataclass
class SpatialSettings:
    max_iter: int = 500
    ftol: float = 1e-8
    gtol: float = 1e-6
    fd_step: float = 1e-5


@dataclass
class SimulationSettings:
    n_stations: int = 20
    n_targets: int = 6
    box_km: float = 300.0
    months: list = field(default_factory=lambda: ["2023-01", "2023-02"])
    days_per_month: int = 12
    reanalysis_days: int = 240
    reference_height: float = 80.0
    hub_heights: list = field(default_factory=lambda: [70.0, 80.0, 90.0])
    kappa: float = 0.015
    sigma_f: float = 0.35
    sigma_eps: float = 0.08
    temporal_corr: float = 0.0
    hourly_stations: int = 0
    reanalysis_bias: float = 0.92


@dataclass
class PipelineConfig:
    workdir: str = "run"
    data: DataPaths = field(default_factory=DataPaths)
    projection: dict | None = None
    months: list = field(default_factory=list)
    shear: ShearSettings = field(default_factory=ShearSettings)
    spatial: SpatialSettings = field(default_factory=SpatialSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    interval_level: float = 0.95
    coverage_levels: list = field(default_factory=lambda: [0.80, 0.95])
    wake_losses: list = field(default_factory=lambda: [0.10, 0.15, 0.20])
    seed: int = 20230101
    threads: int = 1
    deterministic: bool = True
    base_dir: str = "."

    def __post_init__(self):
        if not 0 < self.interval_level < 1:
            raise ValueError("interval_level must lie in (0, 1)")
        for lvl in self.coverage_levels:
            if not 0 < lvl < 1:
                raise ValueError("coverage levels must lie in (0, 1)")
        for loss in self.wake_losses:
            if not 0 <= loss < 1:
                raise ValueError("wake losses must lie in [0, 1)")
        for h in self.simulation.hub_heights:
            if not 50 <= h <= 100:
                raise ValueError("hub heights must lie in [50, 100] m")

    def path(self, rel) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def work(self) -> Path:
        return self.path(self.workdir)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _build(cls, raw):
    raw = raw or {}
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**raw)


def load_config(path, **overrides) -> PipelineConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text()) or {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    nested = {"data": DataPaths, "shear": ShearSettings, "spatial": SpatialSettings,
              "simulation": SimulationSettings}
    for key, cls in nested.items():
        raw[key] = _build(cls, raw.get(key))
    raw.setdefault("base_dir", str(path.parent.resolve()))
    return _build(PipelineConfig, raw)
