"""Validation metrics, wake-loss scaling, interval coverage and the
reanalysis-style power-law baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hubwind.shear import implied_alpha, power_law_extrapolate


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mean_bias: float  # predicted - observed
    pearson: float
    n: int


@dataclass(frozen=True)
class CoverageReport:
    level: float
    coverage: float
    n: int


def _paired(*arrays):
    arrays = [np.asarray(a, dtype=float).ravel() for a in arrays]
    if len({len(a) for a in arrays}) != 1:
        raise ValueError("series are not aligned")
    ok = np.logical_and.reduce([np.isfinite(a) for a in arrays])
    return [a[ok] for a in arrays]


def compute_metrics(pred, obs) -> MetricReport:
    """RMSE, signed mean bias and Pearson correlation over finite pairs."""
    pred, obs = _paired(pred, obs)
    if len(pred) < 2:
        raise ValueError("need at least two valid pairs")
    err = pred - obs
    pc, oc = pred - pred.mean(), obs - obs.mean()
    denom = np.sqrt((pc @ pc) * (oc @ oc))
    pearson = float(pc @ oc / denom) if denom > 0 else float("nan")
    if np.isfinite(pearson):
        pearson = float(np.clip(pearson, -1.0, 1.0))
    return MetricReport(float(np.sqrt(np.mean(err**2))), float(err.mean()), pearson, len(pred))


def wake_adjust(pred, loss_fraction):
    if not 0 <= loss_fraction < 1:
        raise ValueError("wake loss fraction must lie in [0, 1)")
    return np.asarray(pred, dtype=float) * (1.0 - loss_fraction)


def empirical_coverage(lo, hi, obs, level=float("nan")) -> CoverageReport:
    lo, hi, obs = _paired(lo, hi, obs)
    if len(obs) == 0:
        raise ValueError("no valid observations to score")
    inside = (lo <= obs) & (obs <= hi)
    return CoverageReport(level, float(inside.mean()), len(obs))


def hourly_to_ten_minute(times, values, cadence=60):
    """Linear interpolation of a regular series onto the 10-minute grid.

    ``times`` are epoch minutes spaced ``cadence`` apart (hourly by default).
    Only consecutive points exactly one cadence apart with finite values are
    bridged; larger gaps stay NaN and nothing is extrapolated past the ends.
    Returns ``(grid_times, values)``.
    """
    times = np.asarray(times, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if len(times) == 0:
        return times.copy(), values.copy()
    if np.any(np.diff(times) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    grid = np.arange(times[0], times[-1] + 1, 10, dtype=np.int64)
    out = np.full(len(grid), np.nan)
    pos = (times - times[0]) // 10
    out[pos] = values
    steps = cadence // 10
    bridge = (np.diff(times) == cadence) & np.isfinite(values[:-1]) & np.isfinite(values[1:])
    frac = np.arange(1, steps) / steps
    for j in np.flatnonzero(bridge):
        out[pos[j] + 1:pos[j] + steps] = values[j] + frac * (values[j + 1] - values[j])
    return grid, out


def site_alpha(w10, w100):
    """Shear exponent between 10 and 100 m; NaN where either is non-positive."""
    return implied_alpha(w10, w100, np.full(np.shape(w10), 100.0))


def reanalysis_baseline(times, w10_hourly, w100_hourly, hub_height):
    """10-minute hub-height series from a two-level hourly reanalysis:
    interpolate both levels in time, then apply the per-time power law."""
    grid, w10 = hourly_to_ten_minute(times, w10_hourly)
    _, w100 = hourly_to_ten_minute(times, w100_hourly)
    alpha = site_alpha(w10, w100)
    return grid, power_law_extrapolate(w10, hub_height, alpha)
