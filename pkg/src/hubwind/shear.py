"""Vertical extrapolation of 10 m wind speed to hub height.

Three models share one prediction interface:

* :class:`ConstantAlphaModel` -- the power law with a fixed shear exponent.
* :class:`HarmonicAlphaModel` -- a shear exponent varying with the diurnal
  cycle, fitted by least squares on exponents implied by pairs of heights.
* :class:`AdditiveShearModel` -- a penalized additive model on the square-root
  scale::

      sqrt(W_h) = b0 + s1(sqrt(W10)) + s2(h) + s3(h, W10)
                  + b1 sin(2 pi t / 24) + b2 cos(2 pi t / 24) + b3 U + b4 V

  Smooths are cubic B-splines with second-order difference penalties,
  centred by a sum-to-zero constraint; ``s3`` is a tensor-product interaction
  with separable penalties. Smoothing parameters are chosen by generalized
  cross-validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from hubwind.core import direction_components
from hubwind.distrib import PROFILE_HEIGHTS, dense_heights, densify_speeds

MODEL_FORMAT = "hubwind.shear.additive/1"
SIGMA_FLOOR = 1e-6
HUB_RANGE = (50.0, 100.0)


def power_law_extrapolate(w10, h, alpha):
    """``w10 * (h / 10) ** alpha``; vectorised."""
    w10 = np.asarray(w10, dtype=float)
    out = w10 * (np.asarray(h, dtype=float) / 10.0) ** alpha
    return float(out) if np.ndim(out) == 0 else out


def implied_alpha(w10, wh, h):
    """Shear exponent linking two speeds; NaN where a speed is non-positive."""
    w10 = np.asarray(w10, dtype=float)
    wh = np.asarray(wh, dtype=float)
    h = np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(wh / w10) / np.log(h / 10.0)
    out = np.where((w10 > 0) & (wh > 0) & (h != 10.0), out, np.nan)
    return float(out) if out.ndim == 0 else out


@dataclass
class ShearTrainingSet:
    """Independent rows of (sqrt W10, h, hour, U, V, sqrt W_h)."""

    sqrt_w10: np.ndarray
    h: np.ndarray
    hour: np.ndarray
    u: np.ndarray
    v: np.ndarray
    sqrt_wh: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in
                  (self.sqrt_w10, self.h, self.hour, self.u, self.v, self.sqrt_wh)]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise ValueError("training columns have different lengths")
        (self.sqrt_w10, self.h, self.hour, self.u, self.v, self.sqrt_wh) = arrays
        if np.any(self.sqrt_w10 < 0) or np.any(self.sqrt_wh < 0):
            raise ValueError("square-root speeds must be non-negative")

    def __len__(self):
        return len(self.sqrt_w10)

    @property
    def w10(self):
        return self.sqrt_w10**2

    def subset(self, idx) -> "ShearTrainingSet":
        return ShearTrainingSet(self.sqrt_w10[idx], self.h[idx], self.hour[idx],
                                self.u[idx], self.v[idx], self.sqrt_wh[idx])

    @classmethod
    def from_profiles(cls, w10, levels, hour, direction, heights=PROFILE_HEIGHTS):
        """Densify three-level profiles (``levels`` is ``(n, 3)``) to 5 m
        pseudo-observations and stack one row per (time, height)."""
        w10 = np.asarray(w10, dtype=float)
        grid = dense_heights()
        dense = densify_speeds(levels, heights, grid)
        n, m = dense.shape
        u, v = direction_components(np.asarray(direction, dtype=float))
        rep = lambda a: np.repeat(np.asarray(a, dtype=float), m)  # noqa: E731
        return cls(
            sqrt_w10=rep(np.sqrt(w10)),
            h=np.tile(grid, n),
            hour=rep(hour),
            u=rep(u),
            v=rep(v),
            sqrt_wh=np.sqrt(dense.ravel()),
        )


class ConstantAlphaModel:
    def __init__(self, alpha: float = 1.0 / 7.0):
        if not np.isfinite(alpha):
            raise ValueError("alpha must be finite")
        self.alpha = float(alpha)

    def predict_speed(self, w10, h, hour=None, direction=None):
        return power_law_extrapolate(w10, h, self.alpha)


def _harmonic_design(hour, n_harmonics):
    hour = np.asarray(hour, dtype=float)
    cols = [np.ones_like(hour)]
    for i in range(1, n_harmonics + 1):
        cols.append(np.sin(2 * np.pi * hour * i / 24.0))
        cols.append(np.cos(2 * np.pi * hour * i / 24.0))
    return np.column_stack(cols)


@dataclass
class HarmonicAlphaModel:
    alpha0: float
    beta_sin: np.ndarray
    beta_cos: np.ndarray

    @property
    def n_harmonics(self) -> int:
        return len(self.beta_sin)

    def alpha(self, hour):
        coef = np.empty(1 + 2 * self.n_harmonics)
        coef[0] = self.alpha0
        coef[1::2] = self.beta_sin
        coef[2::2] = self.beta_cos
        return _harmonic_design(hour, self.n_harmonics) @ coef

    def predict_speed(self, w10, h, hour, direction=None):
        return power_law_extrapolate(w10, h, self.alpha(hour))


def fit_harmonic_alpha(train: ShearTrainingSet, n_harmonics: int = 2) -> HarmonicAlphaModel:
    """Least-squares fit of implied exponents on diurnal harmonics."""
    if n_harmonics < 0:
        raise ValueError("number of harmonics must be >= 0")
    alpha = implied_alpha(train.w10, train.sqrt_wh**2, train.h)
    ok = np.isfinite(alpha)
    X = _harmonic_design(train.hour[ok], n_harmonics)
    if ok.sum() < X.shape[1]:
        raise ValueError("too few valid rows for the harmonic design")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("harmonic design is rank deficient (too few distinct hours)")
    coef, *_ = np.linalg.lstsq(X, alpha[ok], rcond=None)
    return HarmonicAlphaModel(float(coef[0]), coef[1::2].copy(), coef[2::2].copy())


# --- penalized additive model -------------------------------------------------

@dataclass
class AdditiveConfig:
    """Basis sizes and smoothing grid for :func:`fit_additive_model`."""

    k_wind: int = 20
    k_height: int = 8
    k_tensor: int = 6
    lambda_grid: tuple = tuple(np.logspace(-6, 6, 7))
    sweeps: int = 2
    ridge: float = 1e-8

    def __post_init__(self):
        if min(self.k_wind, self.k_height, self.k_tensor) < 4:
            raise ValueError("cubic B-spline bases need at least 4 functions")
        if len(self.lambda_grid) < 1 or min(self.lambda_grid) <= 0:
            raise ValueError("smoothing grid must hold positive values")


@dataclass
class Marginal:
    """A centred cubic B-spline basis over ``[lo, hi]``."""

    knots: np.ndarray
    lo: float
    hi: float
    constraint: np.ndarray  # (k, k - 1) null-space basis of the centring constraint

    @classmethod
    def build(cls, x, dim):
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            hi = lo + 1.0
        inner = np.linspace(lo, hi, dim - 2)
        step = inner[1] - inner[0]
        knots = np.concatenate([lo - step * np.arange(3, 0, -1), inner,
                                hi + step * np.arange(1, 4)])
        raw = cls._raw(knots, lo, hi, x)
        col_sums = raw.sum(axis=0)[:, None]
        q, _ = np.linalg.qr(col_sums, mode="complete")
        return cls(knots, lo, hi, q[:, 1:])

    @staticmethod
    def _raw(knots, lo, hi, x):
        x = np.clip(np.asarray(x, dtype=float), lo, hi)
        return BSpline.design_matrix(x, knots, 3).toarray()

    @property
    def dim(self) -> int:
        return self.constraint.shape[1]

    def design(self, x):
        return self._raw(self.knots, self.lo, self.hi, x) @ self.constraint

    def penalty(self):
        k = self.constraint.shape[0]
        d = np.diff(np.eye(k), n=2, axis=0)
        return self.constraint.T @ (d.T @ d) @ self.constraint


def _row_kron(a, b):
    return (a[:, :, None] * b[:, None, :]).reshape(len(a), -1)


@dataclass
class AdditiveShearModel:
    wind: Marginal
    height: Marginal
    tensor_height: Marginal
    tensor_wind: Marginal
    coef: np.ndarray
    lambdas: np.ndarray
    residual_variance: float
    edf: float
    n_train: int
    meta: dict = field(default_factory=dict)

    def design(self, sqrt_w10, h, hour, u, v):
        sqrt_w10 = np.atleast_1d(np.asarray(sqrt_w10, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), sqrt_w10.shape)
        hour = np.broadcast_to(np.asarray(hour, dtype=float), sqrt_w10.shape)
        u = np.broadcast_to(np.asarray(u, dtype=float), sqrt_w10.shape)
        v = np.broadcast_to(np.asarray(v, dtype=float), sqrt_w10.shape)
        tensor = _row_kron(self.tensor_height.design(h), self.tensor_wind.design(sqrt_w10**2))
        return np.column_stack([
            np.ones_like(sqrt_w10),
            self.wind.design(sqrt_w10),
            self.height.design(h),
            tensor,
            np.sin(2 * np.pi * hour / 24.0),
            np.cos(2 * np.pi * hour / 24.0),
            u,
            v,
        ])

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.residual_variance))

    def predict_sqrt(self, w10, h, hour, direction):
        h_arr = np.asarray(h, dtype=float)
        if np.any((h_arr < HUB_RANGE[0]) | (h_arr > HUB_RANGE[1])):
            raise ValueError(f"hub height outside the trained range {HUB_RANGE}")
        u, v = direction_components(np.asarray(direction, dtype=float))
        sqrt_w10 = np.sqrt(np.maximum(np.asarray(w10, dtype=float), 0.0))
        return self.design(sqrt_w10, h, hour, u, v) @ self.coef

    def predict_speed(self, w10, h, hour, direction):
        """Mean speed ``m^2 + sigma^2`` implied by a Gaussian sqrt-scale error."""
        m = self.predict_sqrt(w10, h, hour, direction)
        return np.maximum(m, 0.0) ** 2 + self.residual_variance

    # persistence

    def to_dict(self) -> dict:
        marg = lambda m: {"knots": m.knots.tolist(), "lo": m.lo, "hi": m.hi,  # noqa: E731
                          "constraint": m.constraint.tolist()}
        return {
            "format": MODEL_FORMAT,
            "wind": marg(self.wind),
            "height": marg(self.height),
            "tensor_height": marg(self.tensor_height),
            "tensor_wind": marg(self.tensor_wind),
            "coef": self.coef.tolist(),
            "lambdas": self.lambdas.tolist(),
            "residual_variance": self.residual_variance,
            "edf": self.edf,
            "n_train": self.n_train,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdditiveShearModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported shear model format {d.get('format')!r}")
        marg = lambda m: Marginal(np.asarray(m["knots"]), m["lo"], m["hi"],  # noqa: E731
                                  np.asarray(m["constraint"]))
        return cls(
            wind=marg(d["wind"]),
            height=marg(d["height"]),
            tensor_height=marg(d["tensor_height"]),
            tensor_wind=marg(d["tensor_wind"]),
            coef=np.asarray(d["coef"]),
            lambdas=np.asarray(d["lambdas"]),
            residual_variance=float(d["residual_variance"]),
            edf=float(d["edf"]),
            n_train=int(d["n_train"]),
            meta=d.get("meta", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "AdditiveShearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _PenalizedSystem:
    """Sufficient statistics for repeated penalized least-squares solves."""

    def __init__(self, X, y, penalties, ridge):
        self.n = len(y)
        self.xtx = X.T @ X
        self.xty = X.T @ y
        self.yty = float(y @ y)
        # scale each penalty to the data so one grid suits every smooth
        self.penalties = []
        for S in penalties:
            scale = np.linalg.norm(self.xtx) / max(np.linalg.norm(S), 1e-300)
            self.penalties.append(S * scale)
        self.ridge = ridge * np.mean(np.diag(self.xtx))

    def penalty(self, lambdas):
        S = sum(lam * P for lam, P in zip(lambdas, self.penalties))
        return S + self.ridge * np.eye(len(self.xty))

    def solve(self, lambdas):
        A = self.xtx + self.penalty(lambdas)
        factor = linalg.cho_factor(A, lower=True)
        coef = linalg.cho_solve(factor, self.xty)
        edf = float(np.trace(linalg.cho_solve(factor, self.xtx)))
        rss = max(self.yty - 2 * coef @ self.xty + coef @ self.xtx @ coef, 0.0)
        return coef, rss, edf

    def gcv(self, lambdas):
        _, rss, edf = self.solve(lambdas)
        return self.n * rss / max(self.n - edf, 1.0) ** 2

    def objective(self, lambdas):
        """Minimised penalized least-squares criterion at ``lambdas``."""
        coef, rss, _ = self.solve(lambdas)
        return rss + coef @ self.penalty(lambdas) @ coef


def _embed(blocks, sizes):
    total = sum(sizes)
    out = []
    offsets = np.cumsum([0] + list(sizes))
    for pos, S in blocks:
        P = np.zeros((total, total))
        a = offsets[pos]
        P[a:a + S.shape[0], a:a + S.shape[0]] = S
        out.append(P)
    return out


def _build_system(train: ShearTrainingSet, config: AdditiveConfig):
    wind = Marginal.build(train.sqrt_w10, config.k_wind)
    height = Marginal.build(train.h, config.k_height)
    t_height = Marginal.build(train.h, config.k_tensor)
    t_wind = Marginal.build(train.w10, config.k_tensor)
    shell = AdditiveShearModel(wind, height, t_height, t_wind, np.zeros(0), np.zeros(0),
                               0.0, 0.0, len(train))
    X = shell.design(train.sqrt_w10, train.h, train.hour, train.u, train.v)
    sizes = [1, wind.dim, height.dim, t_height.dim * t_wind.dim, 4]
    Ih, Iw = np.eye(t_height.dim), np.eye(t_wind.dim)
    penalties = _embed(
        [
            (1, wind.penalty()),
            (2, height.penalty()),
            (3, np.kron(t_height.penalty(), Iw)),
            (3, np.kron(Ih, t_wind.penalty())),
        ],
        sizes,
    )
    return shell, X, penalties


def fit_additive_model(train: ShearTrainingSet, config: AdditiveConfig | None = None
                       ) -> AdditiveShearModel:
    """Penalized least squares on the sqrt scale with GCV smoothing selection.

    Smoothing parameters are chosen by coordinate descent over
    ``config.lambda_grid`` (one parameter per penalty, ``config.sweeps``
    passes). The residual variance is ``RSS / (n - edf)``.
    """
    config = config or AdditiveConfig()
    if np.any((train.h < HUB_RANGE[0]) | (train.h > HUB_RANGE[1])):
        raise ValueError(f"training heights must lie in {HUB_RANGE}")
    shell, X, penalties = _build_system(train, config)
    if len(train) < X.shape[1]:
        raise ValueError(f"{len(train)} rows cannot support {X.shape[1]} coefficients")
    y = train.sqrt_wh
    system = _PenalizedSystem(X, y, penalties, config.ridge)

    grid = np.asarray(config.lambda_grid, dtype=float)
    lambdas = np.full(len(penalties), grid[len(grid) // 2])
    best = system.gcv(lambdas)
    for _ in range(config.sweeps):
        for j in range(len(lambdas)):
            for cand in grid:
                trial = lambdas.copy()
                trial[j] = cand
                score = system.gcv(trial)
                if score < best:
                    best, lambdas = score, trial

    try:
        coef, _, edf = system.solve(lambdas)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("penalized normal equations are singular") from exc
    resid = y - X @ coef
    dof = max(system.n - edf, 1.0)
    variance = max(float(resid @ resid) / dof, SIGMA_FLOOR**2)

    shell.coef = coef
    shell.lambdas = lambdas
    shell.residual_variance = variance
    shell.edf = edf
    shell.meta = {"gcv": best, "config": {"k_wind": config.k_wind,
                                          "k_height": config.k_height,
                                          "k_tensor": config.k_tensor}}
    return shell


def predict_additive(model: AdditiveShearModel, w10, h, hour, direction):
    """Sqrt-scale mean and the station residual SD."""
    return model.predict_sqrt(w10, h, hour, direction), model.sigma


def station_residual_sd(model: AdditiveShearModel) -> float:
    return model.sigma
