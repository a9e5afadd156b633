"""Weibull climatology, empirical CDFs, quantile mapping and vertical
profile densification used to prepare reanalysis series for training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

PROFILE_HEIGHTS = (50.0, 75.0, 100.0)
DENSE_STEP = 5.0


@dataclass(frozen=True)
class WeibullParams:
    """Two-parameter Weibull: shape ``k`` and scale ``lam`` (m/s)."""

    k: float
    lam: float

    def __post_init__(self):
        if not (self.k > 0 and self.lam > 0):
            raise ValueError(f"Weibull parameters must be positive, got k={self.k}, lam={self.lam}")

    def sqrt_params(self) -> "WeibullParams":
        """Law of ``sqrt(W)``: again Weibull with shape 2k and scale sqrt(lam)."""
        return WeibullParams(2.0 * self.k, float(np.sqrt(self.lam)))

    def mean(self) -> float:
        return float(self.lam * gamma(1.0 + 1.0 / self.k))


def weibull_cdf(x, params: WeibullParams):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("Weibull CDF is defined for x >= 0")
    out = -np.expm1(-((x / params.lam) ** params.k))
    return float(out) if out.ndim == 0 else out


def weibull_quantile(p, params: WeibullParams):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("probability must lie in [0, 1)")
    out = params.lam * (-np.log1p(-p)) ** (1.0 / params.k)
    return float(out) if out.ndim == 0 else out


def mean_sqrt_wind(params: WeibullParams) -> float:
    """E[sqrt(W)] for W ~ Weibull(k, lam)."""
    return float(np.sqrt(params.lam) * gamma(1.0 + 1.0 / (2.0 * params.k)))


@dataclass(frozen=True)
class EmpiricalCdf:
    """Empirical CDF with plotting position ``rank / (n + 1)``.

    Tied values share the average rank of their group, so every
    probability lies strictly inside (0, 1).
    """

    sorted_values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.sorted_values)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        below = np.searchsorted(self.sorted_values, w, side="left")
        at_or_below = np.searchsorted(self.sorted_values, w, side="right")
        ties = at_or_below - below
        # values absent from the sample fall half-way between neighbours
        rank = below + (ties + 1) / 2.0
        out = rank / (self.n + 1)
        return float(out) if out.ndim == 0 else out


def build_empirical_cdf(series) -> EmpiricalCdf:
    values = np.asarray(series, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("an empirical CDF needs at least 2 values")
    if not np.all(np.isfinite(values)):
        raise ValueError("series contains non-finite values")
    if np.any(values < 0):
        raise ValueError("wind speeds must be non-negative")
    return EmpiricalCdf(np.sort(values))


def quantile_map(series, target: WeibullParams) -> np.ndarray:
    """Replace each value with the target Weibull quantile at its empirical
    probability. Rank order is preserved and the output marginal follows
    ``target``."""
    values = np.asarray(series, dtype=float)
    ecdf = build_empirical_cdf(values)
    return weibull_quantile(np.atleast_1d(ecdf(values)), target)


@dataclass(frozen=True)
class VerticalProfile:
    speeds: tuple
    heights: tuple = PROFILE_HEIGHTS

    def __post_init__(self):
        if len(self.speeds) != 3 or len(self.heights) != 3:
            raise ValueError("a vertical profile has exactly three levels")
        if any(s < 0 for s in self.speeds):
            raise ValueError("profile speeds must be non-negative")


def dense_heights() -> np.ndarray:
    return np.arange(PROFILE_HEIGHTS[0], PROFILE_HEIGHTS[-1] + DENSE_STEP / 2, DENSE_STEP)


def densify_speeds(speeds, heights=PROFILE_HEIGHTS, grid=None) -> np.ndarray:
    """Quadratic through three levels evaluated on ``grid`` (default 50..100 m
    every 5 m), vectorised over leading axes of ``speeds`` with shape
    ``(..., 3)``. Negative evaluations clamp to 0."""
    speeds = np.asarray(speeds, dtype=float)
    grid = dense_heights() if grid is None else np.asarray(grid, dtype=float)
    h0, h1, h2 = (float(h) for h in heights)
    # Lagrange weights, one row per grid height
    l0 = (grid - h1) * (grid - h2) / ((h0 - h1) * (h0 - h2))
    l1 = (grid - h0) * (grid - h2) / ((h1 - h0) * (h1 - h2))
    l2 = (grid - h0) * (grid - h1) / ((h2 - h0) * (h2 - h1))
    weights = np.stack([l0, l1, l2], axis=0)
    return np.maximum(speeds @ weights, 0.0)


def densify_profile(profile: VerticalProfile) -> np.ndarray:
    """Return an ``(11, 2)`` array of ``(height, speed)`` pairs."""
    grid = dense_heights()
    speeds = densify_speeds(profile.speeds, profile.heights, grid)
    return np.column_stack([grid, speeds])


def gwa_mean_at_height(mean50, mean100, h):
    """Power-law interpolation of a climatological mean between 50 and 100 m."""
    mean50 = np.asarray(mean50, dtype=float)
    mean100 = np.asarray(mean100, dtype=float)
    if np.any(mean50 <= 0) or np.any(mean100 <= 0):
        raise ValueError("climatological means must be positive")
    h = np.asarray(h, dtype=float)
    if np.any((h < 50) | (h > 100)):
        raise ValueError("target height must lie in [50, 100] m")
    alpha = np.log(mean100 / mean50) / np.log(2.0)
    out = mean100 * (h / 100.0) ** alpha
    return float(out) if out.ndim == 0 else out
