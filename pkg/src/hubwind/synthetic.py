"""Synthetic worlds with known truth, standing in for station, reanalysis,
atlas and wind-farm data in tests and demonstration runs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from hubwind.core import direction_components


@dataclass(frozen=True)
class ShearTruth:
    """Known shear law ``W_h = W10 (h / 10) ** alpha(W10, direction, hour)``.

    ``alpha = a0 + a_wind exp(-W10 / wind_scale) + a_dir cos(direction - dir0)
    + a_diurnal cos(2 pi (hour - peak_hour) / 24)``. The stable-night term
    decaying with wind speed makes the exponent nonlinear in W10. For
    ``a_wind * ln(10) < e`` the map W10 -> W_h is strictly increasing for
    every height up to 100 m, so it can be inverted.
    """

    a0: float = 0.20
    a_wind: float = 0.30
    wind_scale: float = 3.5
    a_dir: float = 0.07
    dir0: float = 225.0
    a_diurnal: float = 0.05
    peak_hour: float = 2.0
    noise_sd: float = 0.06

    def alpha(self, w10, direction, hour):
        w10 = np.asarray(w10, dtype=float)
        return (self.a0
                + self.a_wind * np.exp(-w10 / self.wind_scale)
                + self.a_dir * np.cos(np.deg2rad(np.asarray(direction) - self.dir0))
                + self.a_diurnal * np.cos(2 * np.pi * (np.asarray(hour) - self.peak_hour) / 24.0))

    def forward(self, w10, h, direction, hour):
        w10 = np.asarray(w10, dtype=float)
        return w10 * (np.asarray(h, dtype=float) / 10.0) ** self.alpha(w10, direction, hour)

    def inverse(self, wh, h, direction, hour, iterations=80):
        """10 m speed whose forward image at ``h`` is ``wh`` (bisection)."""
        wh = np.asarray(wh, dtype=float)
        shape = np.broadcast(wh, h, direction, hour).shape
        wh = np.broadcast_to(wh, shape)
        lo = np.zeros(shape)
        hi = 2.0 * np.maximum(wh, 0.0) + 1e-9
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            above = self.forward(mid, h, direction, hour) > wh
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        return 0.5 * (lo + hi)

    def observe_10m(self, w10_true, rng):
        """Anemometer reading: multiplicative log-normal error about the truth."""
        return np.asarray(w10_true) * np.exp(self.noise_sd * rng.standard_normal(np.shape(w10_true)))


def shear_training_arrays(truth: ShearTruth, n_times: int, rng, weibull=(2.0, 6.0),
                          heights=(50.0, 75.0, 100.0)):
    """Hourly reanalysis-like draws: returns ``(w10_obs, levels, hour, direction)``
    with ``levels`` of shape ``(n_times, len(heights))`` from the true law."""
    k, lam = weibull
    w10_true = lam * rng.weibull(k, n_times)
    hour = np.arange(n_times) % 24
    direction = rng.uniform(0.0, 360.0, n_times)
    levels = np.column_stack([truth.forward(w10_true, h, direction, hour) for h in heights])
    w10_obs = truth.observe_10m(w10_true, rng)
    return w10_obs, levels, hour.astype(float), direction


@dataclass
class SyntheticWorld:
    """Generated data plus the truth it was drawn from."""

    settings: dict
    seed: int
    shear_truth: ShearTruth
    station_xy: np.ndarray
    target_xy: np.ndarray
    climatology: np.ndarray          # sqrt-scale mean at the reference height, stations then targets
    latent: np.ndarray               # (n_times, n_sites) sqrt-scale anomalies at the reference height
    stations: "pd.DataFrame"
    targets: "pd.DataFrame"
    winds: "pd.DataFrame"
    reanalysis: "pd.DataFrame"
    farm_obs: "pd.DataFrame"
    baseline: "pd.DataFrame"
    extra: dict = field(default_factory=dict)

    def truth_dict(self) -> dict:
        return {
            "seed": self.seed,
            "settings": self.settings,
            "shear_truth": asdict(self.shear_truth),
            "station_xy": self.station_xy.tolist(),
            "target_xy": self.target_xy.tolist(),
            "climatology": self.climatology.tolist(),
        }

    def write(self, data_dir):
        import json
        from pathlib import Path

        from hubwind.ingest import write_csv_atomic, write_text_atomic

        data_dir = Path(data_dir)
        fmt = "%.6f"
        write_csv_atomic(self.stations, data_dir / "stations.csv", float_format=fmt)
        write_csv_atomic(self.targets, data_dir / "targets.csv", float_format=fmt)
        write_csv_atomic(self.winds, data_dir / "winds_10m.csv", float_format=fmt)
        write_csv_atomic(self.reanalysis, data_dir / "reanalysis.csv", float_format=fmt)
        write_csv_atomic(self.farm_obs, data_dir / "farm_obs.csv", float_format=fmt)
        write_csv_atomic(self.baseline, data_dir / "baseline_hourly.csv", float_format=fmt)
        write_text_atomic(json.dumps(self.truth_dict(), indent=1), data_dir / "truth.json")


def climatology_field(xy, box_km):
    """Smooth sqrt-scale mean wind at the reference height (about 2.1-2.6)."""
    x, y = xy[:, 0] / box_km, xy[:, 1] / box_km
    return 2.35 + 0.18 * np.sin(2 * np.pi * x / 1.3) * np.cos(2 * np.pi * y / 1.1) + 0.2 * (0.5 - x)


def _ar1_field(L, n_times, rho, rng):
    n = L.shape[0]
    shocks = rng.standard_normal((n_times, n)) @ L.T
    if rho == 0:
        return shocks
    out = np.empty_like(shocks)
    out[0] = shocks[0]
    scale = np.sqrt(1 - rho**2)
    for t in range(1, n_times):
        out[t] = rho * out[t - 1] + scale * shocks[t]
    return out


def _month_epochs(months, days):
    import pandas as pd

    from hubwind.core import DEFAULT_ORIGIN

    origin = pd.Timestamp(DEFAULT_ORIGIN)
    out = []
    for m in months:
        start = pd.Timestamp(f"{m}-01", tz="UTC")
        first = int((start - origin) // pd.Timedelta(minutes=1))
        out.append(first + 10 * np.arange(days * 144))
    return np.concatenate(out)


def _directions(n_times, n_sites, rho, rng):
    if rho == 0:
        regional = rng.uniform(0, 360, n_times)
    else:
        regional = np.mod(rng.uniform(0, 360) + np.cumsum(rng.normal(0, 10, n_times)), 360)
    return np.mod(regional[:, None] + rng.normal(0, 10, (n_times, n_sites)), 360)


def _fit_weibull(sample):
    from scipy import stats

    from hubwind.distrib import WeibullParams

    k, _, lam = stats.weibull_min.fit(np.asarray(sample), floc=0)
    return WeibullParams(float(k), float(lam))


def generate_synthetic(settings=None, seed=0, shear_truth: ShearTruth | None = None) -> SyntheticWorld:
    """Draw a world: stations, targets, 10 m observations, multi-level
    reanalysis, farm hub-height truth and atlas climatology.

    Hub-height fields at the reference height follow the Matern-1 Gaussian
    model on the square-root scale. 10 m winds come from inverting the known
    shear law, then receive anemometer noise. Weibull parameters are fitted to
    the generated truth so the atlas is consistent with the marginals.
    """
    import pandas as pd

    from hubwind.config import SimulationSettings
    from hubwind.distrib import mean_sqrt_wind
    from hubwind.ingest import to_iso
    from hubwind.spatial import SpatialHyperparams, build_covariance, cholesky_with_jitter

    s = settings or SimulationSettings()
    if not 1 <= s.days_per_month <= 28:
        raise ValueError("days_per_month must lie in [1, 28] so every month stays within itself")
    if s.n_stations < 1 or s.n_targets < 1:
        raise ValueError("need at least one station and one target")
    truth = shear_truth or ShearTruth()
    rng = np.random.default_rng(seed)
    box = s.box_km
    station_xy = rng.uniform(0, box, (s.n_stations, 2))
    target_xy = rng.uniform(0.15 * box, 0.85 * box, (s.n_targets, 2))
    xy = np.vstack([station_xy, target_xy])
    clim = climatology_field(xy, box)
    theta = SpatialHyperparams(s.kappa, s.sigma_f, s.sigma_eps, 0.0, 1.0)
    C = build_covariance(xy, theta, np.zeros(len(xy)))
    L = cholesky_with_jitter(C)
    href = s.reference_height
    ns = s.n_stations

    # operational period at 10-minute resolution
    epochs = _month_epochs(s.months, s.days_per_month)
    hours = (epochs % 1440) / 60.0
    latent = _ar1_field(L, len(epochs), s.temporal_corr, rng)
    direction = _directions(len(epochs), len(xy), s.temporal_corr, rng)
    w_ref = np.maximum(clim + latent, 0.0) ** 2
    w10_true = truth.inverse(w_ref, href, direction, hours[:, None])
    w10_obs = truth.observe_10m(w10_true[:, :ns], rng)

    station_ids = [f"S{i:02d}" for i in range(ns)]
    site_ids = [f"F{i:02d}" for i in range(s.n_targets)]
    hub = rng.choice(np.asarray(s.hub_heights, dtype=float), s.n_targets)

    iso = np.asarray(to_iso(epochs))
    wind_parts = []
    for j, sid in enumerate(station_ids):
        keep = np.ones(len(epochs), dtype=bool)
        if j < s.hourly_stations:
            keep = epochs % 60 == 0
        wind_parts.append(pd.DataFrame({"station_id": sid, "timestamp": iso[keep],
                                        "speed_ms": w10_obs[keep, j],
                                        "direction_deg": direction[keep, j]}))
    winds = pd.concat(wind_parts, ignore_index=True)

    farm_speed = truth.forward(w10_true[:, ns:], hub[None, :], direction[:, ns:], hours[:, None])
    farm_obs = pd.DataFrame({
        "site_id": np.repeat(np.asarray(site_ids)[None, :], len(epochs), axis=0).T.ravel(),
        "timestamp": np.tile(iso, s.n_targets),
        "speed_ms": farm_speed.T.ravel(),
    })

    hourly = epochs % 60 == 0
    base_noise = rng.normal(0, 0.1, (hourly.sum(), s.n_targets, 2))
    w10_t = w10_true[hourly, ns:]
    baseline = pd.DataFrame({
        "site_id": np.repeat(site_ids, hourly.sum()),
        "timestamp": np.tile(iso[hourly], s.n_targets),
        "w10": (w10_t * np.exp(base_noise[..., 0])).T.ravel(),
        "w100": (truth.forward(w10_t, 100.0, direction[hourly, ns:], hours[hourly, None])
                 * 1.05 * np.exp(base_noise[..., 1])).T.ravel(),
    })

    # training period: hourly reanalysis at each station grid cell, the year before
    year0 = int(s.months[0][:4]) - 1
    r_epochs = _month_epochs([f"{year0}-01"], s.reanalysis_days)
    r_epochs = r_epochs[r_epochs % 60 == 0]
    r_hours = (r_epochs % 1440) / 60.0
    sd = np.sqrt(s.sigma_f**2 + s.sigma_eps**2)
    r_latent = _ar1_field(np.diag(np.full(ns, sd)), len(r_epochs), s.temporal_corr, rng)
    r_dir = _directions(len(r_epochs), ns, s.temporal_corr, rng)
    r_ref = np.maximum(clim[:ns] + r_latent, 0.0) ** 2
    r_w10_true = truth.inverse(r_ref, href, r_dir, r_hours[:, None])
    r_w10 = truth.observe_10m(r_w10_true, rng)
    levels = {h: truth.forward(r_w10_true, h, r_dir, r_hours[:, None]) for h in (50.0, 75.0, 100.0)}
    r_iso = np.asarray(to_iso(r_epochs))
    reanalysis = pd.concat([
        pd.DataFrame({"station_id": sid, "timestamp": r_iso, "w10": r_w10[:, j],
                      "w50": s.reanalysis_bias * levels[50.0][:, j],
                      "w75": s.reanalysis_bias * levels[75.0][:, j],
                      "w100": s.reanalysis_bias * levels[100.0][:, j],
                      "direction_deg": r_dir[:, j]})
        for j, sid in enumerate(station_ids)
    ], ignore_index=True)

    station_rows = []
    for j, sid in enumerate(station_ids):
        row = {"station_id": sid, "x_km": station_xy[j, 0], "y_km": station_xy[j, 1]}
        for h in (50, 75, 100):
            p = _fit_weibull(levels[float(h)][:, j])
            row[f"k_{h}"], row[f"lambda_{h}"] = p.k, p.lam
            if h in (50, 100):
                row[f"mean{h}"] = mean_sqrt_wind(p)
        station_rows.append(row)
    stations = pd.DataFrame(station_rows)[["station_id", "x_km", "y_km", "k_50", "lambda_50", "k_75",
                                          "lambda_75", "k_100", "lambda_100", "mean50", "mean100"]]

    target_rows = []
    for i, sid in enumerate(site_ids):
        col = ns + i
        row = {"site_id": sid, "x_km": target_xy[i, 0], "y_km": target_xy[i, 1],
               "hub_height_m": hub[i]}
        for h in (50, 100):
            series = truth.forward(w10_true[:, col], float(h), direction[:, col], hours)
            row[f"mean{h}"] = mean_sqrt_wind(_fit_weibull(series))
        target_rows.append(row)
    targets = pd.DataFrame(target_rows)

    settings_dict = asdict(s) if hasattr(s, "__dataclass_fields__") else dict(s)
    return SyntheticWorld(
        settings=settings_dict, seed=seed, shear_truth=truth, station_xy=station_xy,
        target_xy=target_xy, climatology=clim, latent=latent, stations=stations,
        targets=targets, winds=winds, reanalysis=reanalysis, farm_obs=farm_obs,
        baseline=baseline, extra={"epochs": epochs, "hub_heights": hub},
    )
