"""Replicated Gaussian-process interpolation on the square-root scale.

Each time point of a month is an independent draw of

    sqrt(W) ~ MVN(mu, C),  C = Sigma_f + diag(sigma_s^2) + sigma_eps^2 I,

where ``Sigma_f`` is a Matern covariance with smoothness fixed at 1,
``sigma_s^2`` is each station's extrapolation residual variance and
``mu = beta0 + beta1 * mu_gwa``. Hyperparameters are found by maximum
likelihood and targets are predicted with the usual conditional Gaussian.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import k1, ndtri

from hubwind.core import pairwise_distances
from hubwind.optim import bfgs_minimize

logger = logging.getLogger(__name__)

MODEL_FORMAT = "hubwind.spatial.month/1"
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class SpatialHyperparams:
    kappa: float
    sigma_f: float
    sigma_eps: float
    beta0: float
    beta1: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.sigma_f > 0 and self.sigma_eps >= 0):
            raise ValueError(f"invalid hyperparameters {self}")

    def to_unconstrained(self) -> np.ndarray:
        eps = max(self.sigma_eps, 1e-12)
        return np.array([np.log(self.kappa), np.log(self.sigma_f), np.log(eps),
                         self.beta0, self.beta1])

    @classmethod
    def from_unconstrained(cls, z) -> "SpatialHyperparams":
        return cls(float(np.exp(z[0])), float(np.exp(z[1])), float(np.exp(z[2])),
                   float(z[3]), float(z[4]))


def matern_nu1(d, kappa, sigma_f):
    """Matern covariance with smoothness 1: ``sigma_f^2 (kappa d) K1(kappa d)``."""
    x = kappa * np.asarray(d, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        corr = np.where(x > 0, x * k1(np.where(x > 0, x, 1.0)), 1.0)
    out = sigma_f**2 * corr
    return float(out) if out.ndim == 0 else out


def build_covariance(stations, theta: SpatialHyperparams, gam_variances):
    d = pairwise_distances(stations)
    C = matern_nu1(d, theta.kappa, theta.sigma_f)
    C = np.atleast_2d(C)
    C[np.diag_indices_from(C)] += np.asarray(gam_variances, dtype=float) + theta.sigma_eps**2
    return C


def cholesky_with_jitter(C, retries=3):
    """Lower Cholesky factor; on failure adds escalating diagonal jitter
    starting at ``1e-8 * mean(diag)``."""
    try:
        return linalg.cholesky(C, lower=True)
    except linalg.LinAlgError:
        pass
    jitter = 1e-8 * float(np.mean(np.diag(C)))
    for _ in range(retries):
        try:
            L = linalg.cholesky(C + jitter * np.eye(len(C)), lower=True)
            logger.debug("Cholesky needed jitter %.3g", jitter)
            return L
        except linalg.LinAlgError:
            jitter *= 10
    raise linalg.LinAlgError("covariance matrix is not positive definite")


@dataclass
class MonthlyDataset:
    """Temporal replicates of sqrt-scale hub-height estimates at stations.

    Rows with any missing station are dropped on construction; the count is
    kept in ``n_dropped``.
    """

    stations: np.ndarray
    sqrt_speeds: np.ndarray
    gam_variances: np.ndarray
    gwa_mean_sqrt: np.ndarray
    height: float = 100.0
    month: str = ""
    n_dropped: int = 0
    station_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.stations = np.atleast_2d(np.asarray(self.stations, dtype=float))
        Y = np.atleast_2d(np.asarray(self.sqrt_speeds, dtype=float))
        n_s = len(self.stations)
        if Y.shape[1] != n_s:
            raise ValueError("sqrt_speeds must have one column per station")
        keep = np.all(np.isfinite(Y), axis=1)
        self.n_dropped += int((~keep).sum())
        self.sqrt_speeds = Y[keep]
        self.gam_variances = np.asarray(self.gam_variances, dtype=float)
        self.gwa_mean_sqrt = np.asarray(self.gwa_mean_sqrt, dtype=float)
        if len(self.gam_variances) != n_s or len(self.gwa_mean_sqrt) != n_s:
            raise ValueError("per-station vectors must match the station count")
        if n_s < 1 or len(self.sqrt_speeds) < 1:
            raise ValueError("dataset needs at least one station and one complete row")
        if not self.station_ids:
            self.station_ids = [str(i) for i in range(n_s)]
        # sufficient statistics for the replicated likelihood
        self._ybar = self.sqrt_speeds.mean(axis=0)
        centred = self.sqrt_speeds - self._ybar
        self._scatter = centred.T @ centred

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_times(self) -> int:
        return len(self.sqrt_speeds)

    def mean_vector(self, theta: SpatialHyperparams):
        return theta.beta0 + theta.beta1 * self.gwa_mean_sqrt


def log_likelihood(data: MonthlyDataset, theta: SpatialHyperparams) -> float:
    """Gaussian log-likelihood summed over all replicate rows.

    Uses one Cholesky factor of ``C`` and the identity
    ``sum_t r_t' C^-1 r_t = tr(C^-1 (S + n (ybar - mu)(ybar - mu)'))`` with ``S``
    the centred scatter matrix. Returns ``-inf`` when ``C`` is not positive
    definite.
    """
    C = build_covariance(data.stations, theta, data.gam_variances)
    try:
        L = linalg.cholesky(C, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    n_t, n_s = data.n_times, data.n_stations
    delta = data._ybar - data.mean_vector(theta)
    M = data._scatter + n_t * np.outer(delta, delta)
    quad = float(np.trace(linalg.cho_solve((L, True), M)))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (quad + n_t * logdet + n_t * n_s * LOG_2PI)


def initial_hyperparams(data: MonthlyDataset) -> SpatialHyperparams:
    """Starting point: practical-range heuristic for kappa, spread of station
    means for sigma_f and OLS of station means on the atlas covariate."""
    d = pairwise_distances(data.stations)
    off = d[np.triu_indices(data.n_stations, k=1)]
    med = float(np.median(off[off > 0])) if np.any(off > 0) else 1.0
    means = data.sqrt_speeds.mean(axis=0)
    sigma_f = float(np.std(means, ddof=1)) if data.n_stations > 1 else 0.0
    if not sigma_f > 1e-3:
        sigma_f = max(float(np.std(data.sqrt_speeds)), 1e-3)
    X = np.column_stack([np.ones(data.n_stations), data.gwa_mean_sqrt])
    beta, *_ = np.linalg.lstsq(X, means, rcond=None)
    return SpatialHyperparams(3.0 / med, sigma_f, 0.1 * sigma_f, float(beta[0]), float(beta[1]))


@dataclass
class FittedSpatialModel:
    theta: SpatialHyperparams
    stations: np.ndarray
    gam_variances: np.ndarray
    gwa_mean_sqrt: np.ndarray
    month: str = ""
    height: float = 100.0
    log_likelihood: float = float("nan")
    n_iter: int = 0
    converged: bool = True
    status: str = ""
    station_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.stations = np.atleast_2d(np.asarray(self.stations, dtype=float))
        self.gam_variances = np.asarray(self.gam_variances, dtype=float)
        self.gwa_mean_sqrt = np.asarray(self.gwa_mean_sqrt, dtype=float)
        self.covariance = build_covariance(self.stations, self.theta, self.gam_variances)
        self.chol = cholesky_with_jitter(self.covariance)
        self.mean = self.theta.beta0 + self.theta.beta1 * self.gwa_mean_sqrt
        self._weight_cache = {}

    @property
    def prior_target_variance(self) -> float:
        return self.theta.sigma_f**2 + self.theta.sigma_eps**2

    def to_dict(self) -> dict:
        t = self.theta
        return {
            "format": MODEL_FORMAT,
            "month": self.month,
            "height": self.height,
            "theta": {"kappa": t.kappa, "sigma_f": t.sigma_f, "sigma_eps": t.sigma_eps,
                      "beta0": t.beta0, "beta1": t.beta1},
            "station_ids": list(self.station_ids),
            "stations": self.stations.tolist(),
            "gam_variances": self.gam_variances.tolist(),
            "gwa_mean_sqrt": self.gwa_mean_sqrt.tolist(),
            "mean": self.mean.tolist(),
            "log_likelihood": self.log_likelihood,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedSpatialModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported spatial model format {d.get('format')!r}")
        return cls(
            theta=SpatialHyperparams(**d["theta"]),
            stations=np.asarray(d["stations"]),
            gam_variances=np.asarray(d["gam_variances"]),
            gwa_mean_sqrt=np.asarray(d["gwa_mean_sqrt"]),
            month=d["month"],
            height=d["height"],
            log_likelihood=d["log_likelihood"],
            n_iter=d["n_iter"],
            converged=d["converged"],
            status=d["status"],
            station_ids=d["station_ids"],
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "FittedSpatialModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def kriging_weights(self, targets, present=None):
        """Weights, cross-covariance and station index for a missingness
        pattern; cached per (targets, pattern)."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if present is None:
            present = np.ones(len(self.stations), dtype=bool)
        key = (targets.tobytes(), np.asarray(present, dtype=bool).tobytes())
        hit = self._weight_cache.get(key)
        if hit is not None:
            return hit
        idx = np.flatnonzero(present)
        cross = np.atleast_2d(matern_nu1(pairwise_distances(targets, self.stations[idx]),
                                         self.theta.kappa, self.theta.sigma_f))
        if len(idx) == len(self.stations):
            L = self.chol
        else:
            L = cholesky_with_jitter(self.covariance[np.ix_(idx, idx)])
        if len(idx):
            weights = linalg.cho_solve((L, True), cross.T).T
        else:
            weights = np.zeros((len(targets), 0))
        var = self.prior_target_variance - np.sum(weights * cross, axis=1)
        out = (weights, np.maximum(var, 0.0), idx)
        self._weight_cache[key] = out
        return out


@dataclass
class PredictionResult:
    """Posterior at targets; fields share a shape (targets, or rows x targets)."""

    sqrt_mean: np.ndarray
    sqrt_var: np.ndarray
    speed_mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float = 0.95

    def __len__(self):
        return len(self.sqrt_mean)

    def records(self):
        for vals in zip(self.sqrt_mean.ravel(), self.sqrt_var.ravel(), self.speed_mean.ravel(),
                        self.lo.ravel(), self.hi.ravel()):
            yield dict(zip(("sqrt_mean", "sqrt_var", "speed_mean", "lo", "hi"), map(float, vals)))


def back_transform(sqrt_mean, sqrt_var, level=0.95):
    """Speed-scale mean ``m^2 + v`` and the squared sqrt-scale interval."""
    if not 0 < level < 1:
        raise ValueError("interval level must lie in (0, 1)")
    m = np.asarray(sqrt_mean, dtype=float)
    v = np.maximum(np.asarray(sqrt_var, dtype=float), 0.0)
    z = ndtri(0.5 + level / 2)
    half = z * np.sqrt(v)
    lo = np.maximum(m - half, 0.0) ** 2
    hi = np.maximum(m + half, 0.0) ** 2
    return m * m + v, lo, hi


def krige_predict(model: FittedSpatialModel, obs, targets, target_gwa_mean_sqrt, level=0.95):
    """Posterior mean/variance at ``targets`` given one row of station values.

    ``obs`` may contain NaN for stations that are missing in this row; the
    system is then reduced to the stations present.
    """
    if not 0 < level < 1:
        raise ValueError("interval level must lie in (0, 1)")
    obs = np.asarray(obs, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    present = np.isfinite(obs)
    weights, var, idx = model.kriging_weights(targets, present)
    prior_mean = model.theta.beta0 + model.theta.beta1 * np.asarray(target_gwa_mean_sqrt, dtype=float)
    m = prior_mean + weights @ (obs[idx] - model.mean[idx])
    speed, lo, hi = back_transform(m, var, level)
    return PredictionResult(m, var.copy(), speed, lo, hi, level)


def predict_series(model: FittedSpatialModel, rows, targets, target_gwa_mean_sqrt, level=0.95):
    """Apply :func:`krige_predict` to every row; returns arrays of shape
    ``(n_rows, n_targets)``. Weights are computed once per missingness pattern."""
    if not 0 < level < 1:
        raise ValueError("interval level must lie in (0, 1)")
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    n_rows, n_targets = len(rows), len(targets)
    m = np.empty((n_rows, n_targets))
    v = np.empty((n_rows, n_targets))
    if n_targets:
        prior_mean = model.theta.beta0 + model.theta.beta1 * np.asarray(target_gwa_mean_sqrt, dtype=float)
        present = np.isfinite(rows)
        patterns, inverse = np.unique(present, axis=0, return_inverse=True)
        inverse = np.ravel(inverse)
        for p, pattern in enumerate(patterns):
            sel = inverse == p
            weights, var, idx = model.kriging_weights(targets, pattern)
            resid = rows[np.ix_(sel, idx)] - model.mean[idx]
            m[sel] = prior_mean + resid @ weights.T
            v[sel] = var
    speed, lo, hi = back_transform(m, v, level)
    return PredictionResult(m, v, speed, lo, hi, level)


def fit_hyperparams(data: MonthlyDataset, init: SpatialHyperparams | None = None,
                    max_iter=500, ftol=1e-8, gtol=1e-6, fd_step=1e-5) -> FittedSpatialModel:
    """Maximum-likelihood fit of all five hyperparameters by BFGS.

    ``kappa``, ``sigma_f`` and ``sigma_eps`` are optimised on the log scale,
    the regression coefficients directly. Gradients are central differences.
    """
    init = init or initial_hyperparams(data)

    def objective(z):
        try:
            theta = SpatialHyperparams.from_unconstrained(z)
        except (ValueError, OverflowError):
            return np.inf
        return -log_likelihood(data, theta)

    z0 = init.to_unconstrained()
    result = bfgs_minimize(objective, z0, max_iter=max_iter, ftol=ftol, gtol=gtol, fd_step=fd_step)
    theta = SpatialHyperparams.from_unconstrained(result.x)
    if not result.converged:
        logger.warning("spatial fit for month %s did not converge: %s", data.month, result.message)
    return FittedSpatialModel(
        theta=theta,
        stations=data.stations,
        gam_variances=data.gam_variances,
        gwa_mean_sqrt=data.gwa_mean_sqrt,
        month=data.month,
        height=data.height,
        log_likelihood=-result.fun,
        n_iter=result.nit,
        converged=result.converged,
        status=result.message,
        station_ids=list(data.station_ids),
    )


def simulate_replicates(stations, theta: SpatialHyperparams, gam_variances, gwa_mean_sqrt,
                        n_times, rng):
    """Draw ``n_times`` independent rows from the marginal model."""
    C = build_covariance(stations, theta, gam_variances)
    L = cholesky_with_jitter(C)
    mu = theta.beta0 + theta.beta1 * np.asarray(gwa_mean_sqrt, dtype=float)
    return mu + rng.standard_normal((n_times, len(C))) @ L.T
