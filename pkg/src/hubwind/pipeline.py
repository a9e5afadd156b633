"""End-to-end orchestration: downscale -> fit-shear -> fit-spatial ->
predict -> evaluate, plus synthetic data generation and grid export.

Every stage writes its outputs atomically under ``config.workdir`` and
records a stamp with the content hashes of its inputs and settings; a stage
whose outputs exist and whose stamp still matches is skipped.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from hubwind.config import PipelineConfig
from hubwind.distrib import WeibullParams, gwa_mean_at_height, quantile_map
from hubwind.evaluation import (
    compute_metrics,
    empirical_coverage,
    reanalysis_baseline,
    wake_adjust,
)
from hubwind.ingest import (
    BASELINE_COLUMNS,
    FARM_COLUMNS,
    PREDICTION_COLUMNS,
    hour_of_day,
    ingest_station_csv,
    month_of,
    read_reanalysis,
    read_site_series,
    read_stations,
    read_targets,
    to_epoch_minutes,
    to_iso,
    write_csv_atomic,
    write_text_atomic,
)
from hubwind.shear import (
    AdditiveShearModel,
    ConstantAlphaModel,
    ShearTrainingSet,
    fit_additive_model,
    fit_harmonic_alpha,
)
from hubwind.spatial import (
    FittedSpatialModel,
    MonthlyDataset,
    back_transform,
    fit_hyperparams,
    predict_series,
)
from hubwind.synthetic import generate_synthetic

logger = logging.getLogger(__name__)

STAGES = ("downscale", "fit-shear", "fit-spatial", "predict", "evaluate")
FLOAT_FORMAT = "%.10g"


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --- stamps -------------------------------------------------------------------

def _sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fingerprint(inputs, params) -> dict:
    files = {}
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            for q in sorted(p.rglob("*")):
                if q.is_file() and not q.name.startswith("."):
                    files[str(q)] = _sha(q)
        elif p.exists():
            files[str(p)] = _sha(p)
        else:
            files[str(p)] = None
    blob = json.dumps(params, sort_keys=True, default=str)
    return {"inputs": files, "params": hashlib.sha256(blob.encode()).hexdigest()}


def _stamp_path(cfg, stage):
    return cfg.work / ".stamps" / f"{stage}.json"


def _is_fresh(cfg, stage, fingerprint, outputs) -> bool:
    stamp = _stamp_path(cfg, stage)
    if not stamp.exists() or not all(Path(o).exists() for o in outputs):
        return False
    return json.loads(stamp.read_text()).get("fingerprint") == fingerprint


def _write_stamp(cfg, stage, fingerprint, outputs):
    body = {"fingerprint": fingerprint, "outputs": sorted(str(o) for o in outputs)}
    write_text_atomic(json.dumps(body, indent=1, sort_keys=True), _stamp_path(cfg, stage))


def _run_stage(cfg, stage, inputs, params, outputs, body, force=False):
    fp = _fingerprint(inputs, params)
    if not force and _is_fresh(cfg, stage, fp, outputs):
        logger.info("[%s] up to date, skipped", stage)
        return outputs
    logger.info("[%s] running", stage)
    try:
        produced = body()
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - tag and re-raise
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    _write_stamp(cfg, stage, fp, produced or outputs)
    return produced or outputs


def _map(cfg, fn, items):
    items = list(items)
    if cfg.deterministic or cfg.threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


# --- paths --------------------------------------------------------------------

def _out(cfg, *parts) -> Path:
    return cfg.work.joinpath(*parts)


def _height_tag(h) -> str:
    return f"h{float(h):g}"


def _spatial_name(month, h) -> str:
    return f"{month}_{_height_tag(h)}.json"


# --- stages -------------------------------------------------------------------

def simulate(cfg: PipelineConfig, data_dir=None):
    """Generate a synthetic world and write its CSV files."""
    data_dir = Path(data_dir) if data_dir else cfg.path(cfg.data.stations).parent
    world = generate_synthetic(cfg.simulation, seed=cfg.seed)
    world.write(data_dir)
    logger.info("[simulate] wrote synthetic world to %s", data_dir)
    return world


def downscale(cfg: PipelineConfig, force=False):
    """Quantile-map every reanalysis level at each station onto its atlas Weibull."""
    out = _out(cfg, "downscaled.csv")
    inputs = [cfg.path(cfg.data.reanalysis), cfg.path(cfg.data.stations)]

    def body():
        stations = read_stations(cfg.path(cfg.data.stations), cfg.projection)
        re = read_reanalysis(cfg.path(cfg.data.reanalysis))
        missing = sorted(set(re["station_id"]) - set(stations.index))
        if missing:
            raise StageError("downscale", f"reanalysis stations without atlas parameters: {missing}")
        parts = []
        for sid, grp in re.groupby("station_id", sort=True):
            grp = grp.copy()
            st = stations.loc[sid]
            for h in (50, 75, 100):
                grp[f"w{h}"] = quantile_map(grp[f"w{h}"].to_numpy(),
                                            WeibullParams(st[f"k_{h}"], st[f"lambda_{h}"]))
            parts.append(grp)
        df = pd.concat(parts, ignore_index=True)
        df.insert(1, "timestamp", to_iso(df.pop("epoch").to_numpy()))
        write_csv_atomic(df, out, float_format=FLOAT_FORMAT)
        return [out]

    return _run_stage(cfg, "downscale", inputs, {}, [out], body, force)


def _training_set(grp) -> ShearTrainingSet:
    direction = grp["direction_deg"].to_numpy() if "direction_deg" in grp else None
    epochs = to_epoch_minutes(grp["timestamp"])
    train = ShearTrainingSet.from_profiles(
        grp["w10"].to_numpy(), grp[["w50", "w75", "w100"]].to_numpy(), hour_of_day(epochs),
        direction if direction is not None else np.zeros(len(grp)))
    if direction is None:
        train.u[:] = 0.0
        train.v[:] = 0.0
    return train


def shear_holdout_report(grp, cfg: PipelineConfig):
    """Chronological split; RMSE (m/s) of the three extrapolation models on
    the held-out 50/75/100 m levels."""
    n = len(grp)
    cut = int(round(n * (1 - cfg.shear.holdout_fraction)))
    train, test = grp.iloc[:cut], grp.iloc[cut:]
    ts = _training_set(train)
    models = {
        "constant_alpha": ConstantAlphaModel(),
        "harmonic_alpha": fit_harmonic_alpha(ts, cfg.shear.harmonics),
        "additive": fit_additive_model(ts, cfg.shear.additive()),
    }
    epochs = to_epoch_minutes(test["timestamp"])
    hours = hour_of_day(epochs)
    direction = test["direction_deg"].to_numpy() if "direction_deg" in test else np.zeros(len(test))
    rows = []
    for name, model in models.items():
        err = []
        for h in (50, 75, 100):
            pred = model.predict_speed(test["w10"].to_numpy(), float(h), hours, direction)
            err.append(pred - test[f"w{h}"].to_numpy())
        err = np.concatenate(err)
        rows.append({"model": name, "sse": float(err @ err), "n": len(err)})
    return rows


def fit_shear(cfg: PipelineConfig, force=False):
    """One additive model per station, plus an 80/20 holdout comparison."""
    src = _out(cfg, "downscaled.csv")
    model_dir = _out(cfg, "shear")
    report = _out(cfg, "shear_report.csv")
    params = asdict(cfg.shear)

    def body():
        df = pd.read_csv(src, dtype={"station_id": str})
        groups = [(sid, grp.reset_index(drop=True)) for sid, grp in df.groupby("station_id", sort=True)]

        def work(item):
            sid, grp = item
            model = fit_additive_model(_training_set(grp), cfg.shear.additive())
            model.meta["station_id"] = sid
            path = model_dir / f"{sid}.json"
            write_text_atomic(json.dumps(model.to_dict(), indent=1), path)
            rows = shear_holdout_report(grp, cfg) if cfg.shear.holdout_fraction > 0 else []
            return path, model.sigma, [dict(r, station_id=sid) for r in rows]

        results = _map(cfg, work, groups)
        rows = []
        for (sid, _), (_, sigma, rep) in zip(groups, results):
            rows.append({"station_id": sid, "model": "sigma_s", "rmse": sigma, "n": 0})
            for r in rep:
                rows.append({"station_id": sid, "model": r["model"],
                             "rmse": np.sqrt(r["sse"] / r["n"]), "n": r["n"]})
        table = pd.DataFrame(rows)
        pooled = [r for _, _, rep in results for r in rep]
        for name in ("constant_alpha", "harmonic_alpha", "additive"):
            sel = [r for r in pooled if r["model"] == name]
            if sel:
                sse = sum(r["sse"] for r in sel)
                n = sum(r["n"] for r in sel)
                table.loc[len(table)] = {"station_id": "ALL", "model": name,
                                         "rmse": np.sqrt(sse / n), "n": n}
        write_csv_atomic(table, report, float_format=FLOAT_FORMAT)
        return [p for p, _, _ in results] + [report]

    outputs = [report]
    return _run_stage(cfg, "fit-shear", [src], params, outputs, body, force)


def _load_shear_models(cfg):
    models = {}
    for path in sorted(_out(cfg, "shear").glob("*.json")):
        models[path.stem] = AdditiveShearModel.load(path)
    if not models:
        raise StageError("fit-spatial", "no fitted shear models; run fit-shear first")
    return models


def station_estimates(winds: pd.DataFrame, models: dict, height: float) -> pd.DataFrame:
    """Sqrt-scale hub-height estimates for every station record."""
    parts = []
    for sid, grp in winds.groupby("station_id", sort=True):
        if sid not in models:
            logger.warning("station %s has no shear model; ignored", sid)
            continue
        est = models[sid].predict_sqrt(grp["speed"].to_numpy(), height,
                                       hour_of_day(grp["epoch"].to_numpy()),
                                       grp["direction"].to_numpy())
        parts.append(pd.DataFrame({"station_id": sid, "epoch": grp["epoch"].to_numpy(),
                                   "sqrt_est": est}))
    return pd.concat(parts, ignore_index=True)


def _select_months(cfg, available):
    available = sorted(set(available))
    if not cfg.months:
        return available
    chosen = []
    for m in cfg.months:
        if m in available:
            chosen.append(m)
        else:
            logger.warning("month %s has no station data; skipped", m)
    return chosen


def _hub_heights(targets):
    return sorted(set(float(h) for h in targets["hub_height_m"]))


def fit_spatial(cfg: PipelineConfig, force=False):
    """One Gaussian-process fit per (month, hub height)."""
    inputs = [cfg.path(cfg.data.winds_10m), cfg.path(cfg.data.stations),
              cfg.path(cfg.data.targets), _out(cfg, "shear")]
    report = _out(cfg, "hyperparams.csv")
    params = {"spatial": asdict(cfg.spatial), "months": cfg.months}

    def body():
        stations = read_stations(cfg.path(cfg.data.stations), cfg.projection)
        targets = read_targets(cfg.path(cfg.data.targets), cfg.projection)
        winds = ingest_station_csv(cfg.path(cfg.data.winds_10m))
        models = _load_shear_models(cfg)
        for stale in _out(cfg, "spatial").glob("*.json"):
            stale.unlink()
        ids = [s for s in stations.index if s in models]
        months_all = month_of(winds["epoch"].to_numpy())
        months = _select_months(cfg, months_all)
        outputs, tasks = [], []
        for h in _hub_heights(targets):
            est = station_estimates(winds, models, h)
            est_path = _out(cfg, "station_estimates", f"{_height_tag(h)}.csv")
            frame = est.assign(timestamp=to_iso(est["epoch"].to_numpy()))
            write_csv_atomic(frame[["station_id", "timestamp", "sqrt_est"]], est_path,
                             float_format=FLOAT_FORMAT)
            outputs.append(est_path)
            wide = est.pivot(index="epoch", columns="station_id", values="sqrt_est").reindex(columns=ids)
            wide_months = month_of(wide.index.to_numpy())
            gwa = gwa_mean_at_height(stations.loc[ids, "mean50"].to_numpy(),
                                     stations.loc[ids, "mean100"].to_numpy(), h)
            for m in months:
                tasks.append((m, h, wide.to_numpy()[wide_months == m], gwa))

        xy = stations.loc[ids, ["x_km", "y_km"]].to_numpy()
        gam_var = np.array([models[s].residual_variance for s in ids])

        def work(task):
            m, h, rows, gwa = task
            data = MonthlyDataset(xy, rows, gam_var, gwa, height=h, month=m, station_ids=list(ids))
            model = fit_hyperparams(data, max_iter=cfg.spatial.max_iter, ftol=cfg.spatial.ftol,
                                    gtol=cfg.spatial.gtol, fd_step=cfg.spatial.fd_step)
            path = _out(cfg, "spatial", _spatial_name(m, h))
            write_text_atomic(json.dumps(model.to_dict(), indent=1), path)
            t = model.theta
            return path, {"month": m, "height": h, "kappa": t.kappa, "sigma_f": t.sigma_f,
                          "sigma_eps": t.sigma_eps, "beta0": t.beta0, "beta1": t.beta1,
                          "log_likelihood": model.log_likelihood, "iterations": model.n_iter,
                          "converged": model.converged, "status": model.status,
                          "n_times": data.n_times, "n_dropped": data.n_dropped}

        results = _map(cfg, work, tasks)
        write_csv_atomic(pd.DataFrame([r for _, r in results]), report, float_format=FLOAT_FORMAT)
        return outputs + [p for p, _ in results] + [report]

    return _run_stage(cfg, "fit-spatial", inputs, params, [report], body, force)


def _target_covariate(targets, h):
    return gwa_mean_at_height(targets["mean50"].to_numpy(), targets["mean100"].to_numpy(), h)


def predict(cfg: PipelineConfig, force=False):
    out = _out(cfg, "predictions.csv")
    inputs = [cfg.path(cfg.data.targets), _out(cfg, "spatial"), _out(cfg, "station_estimates")]
    params = {"interval_level": cfg.interval_level}

    def body():
        targets = read_targets(cfg.path(cfg.data.targets), cfg.projection)
        parts = []
        for h in _hub_heights(targets):
            sites = targets[targets["hub_height_m"] == h]
            est = pd.read_csv(_out(cfg, "station_estimates", f"{_height_tag(h)}.csv"),
                              dtype={"station_id": str})
            est["epoch"] = to_epoch_minutes(est["timestamp"])
            wide = est.pivot(index="epoch", columns="station_id", values="sqrt_est")
            months = month_of(wide.index.to_numpy())
            for path in sorted(_out(cfg, "spatial").glob(f"*_{_height_tag(h)}.json")):
                model = FittedSpatialModel.load(path)
                sel = months == model.month
                rows = wide.reindex(columns=model.station_ids).to_numpy()[sel]
                epochs = wide.index.to_numpy()[sel]
                res = predict_series(model, rows, sites[["x_km", "y_km"]].to_numpy(),
                                     _target_covariate(sites, h), cfg.interval_level)
                for j, sid in enumerate(sites.index):
                    parts.append(pd.DataFrame({
                        "site_id": sid, "epoch": epochs,
                        "speed_mean": res.speed_mean[:, j], "sqrt_mean": res.sqrt_mean[:, j],
                        "sqrt_var": res.sqrt_var[:, j], "lo": res.lo[:, j], "hi": res.hi[:, j],
                    }))
        if not parts:
            raise StageError("predict", "no fitted spatial models; run fit-spatial first")
        df = pd.concat(parts, ignore_index=True).sort_values(["site_id", "epoch"], kind="stable")
        df.insert(1, "timestamp", to_iso(df.pop("epoch").to_numpy()))
        write_csv_atomic(df[PREDICTION_COLUMNS], out, float_format=FLOAT_FORMAT)
        return [out]

    return _run_stage(cfg, "predict", inputs, params, [out], body, force)


def _metric_rows(source, pred, obs, sites, losses):
    rows = []
    for loss in [0.0] + list(losses):
        adj = wake_adjust(pred, loss)
        scopes = [("ALL", np.ones(len(pred), dtype=bool))]
        scopes += [(s, sites == s) for s in sorted(set(sites))]
        for scope, sel in scopes:
            try:
                r = compute_metrics(adj[sel], obs[sel])
            except ValueError:
                continue
            rows.append({"source": source, "wake_loss": loss, "scope": scope, "rmse": r.rmse,
                         "mean_bias": r.mean_bias, "pearson": r.pearson, "n": r.n})
    return rows


def evaluate(cfg: PipelineConfig, force=False):
    """Metrics against farm observations (model and, if given, the
    reanalysis power-law baseline) and interval coverage."""
    metrics_out = _out(cfg, "metrics.csv")
    coverage_out = _out(cfg, "coverage.csv")
    farm_path = cfg.path(cfg.data.farm_obs)
    base_path = cfg.path(cfg.data.baseline)
    inputs = [_out(cfg, "predictions.csv"), farm_path, cfg.path(cfg.data.targets)]
    if base_path is not None and base_path.exists():
        inputs.append(base_path)
    params = {"coverage_levels": cfg.coverage_levels, "wake_losses": cfg.wake_losses}

    def body():
        if farm_path is None or not farm_path.exists():
            raise StageError("evaluate", "farm observations file is required for evaluation")
        pred = pd.read_csv(_out(cfg, "predictions.csv"), dtype={"site_id": str})
        pred["epoch"] = to_epoch_minutes(pred["timestamp"])
        obs = read_site_series(farm_path, FARM_COLUMNS)
        merged = pred.merge(obs, on=["site_id", "epoch"], how="left")
        sites = merged["site_id"].to_numpy()
        rows = _metric_rows("model", merged["speed_mean"].to_numpy(), merged["speed_ms"].to_numpy(),
                            sites, cfg.wake_losses)

        if base_path is not None and base_path.exists():
            targets = read_targets(cfg.path(cfg.data.targets), cfg.projection)
            base = read_site_series(base_path, BASELINE_COLUMNS)
            parts = []
            for sid, grp in base.groupby("site_id", sort=True):
                grid, hub = reanalysis_baseline(grp["epoch"].to_numpy(), grp["w10"].to_numpy(),
                                                grp["w100"].to_numpy(),
                                                float(targets.loc[sid, "hub_height_m"]))
                parts.append(pd.DataFrame({"site_id": sid, "epoch": grid, "baseline": hub}))
            bl = pd.concat(parts, ignore_index=True).merge(obs, on=["site_id", "epoch"], how="inner")
            rows += _metric_rows("baseline", bl["baseline"].to_numpy(), bl["speed_ms"].to_numpy(),
                                 bl["site_id"].to_numpy(), cfg.wake_losses)
        write_csv_atomic(pd.DataFrame(rows), metrics_out, float_format=FLOAT_FORMAT)

        cov_rows = []
        m, v, y = (merged[c].to_numpy() for c in ("sqrt_mean", "sqrt_var", "speed_ms"))
        for level in cfg.coverage_levels:
            _, lo, hi = back_transform(m, v, level)
            for scope in ["ALL"] + sorted(set(sites)):
                sel = np.ones(len(sites), dtype=bool) if scope == "ALL" else sites == scope
                try:
                    c = empirical_coverage(lo[sel], hi[sel], y[sel], level)
                except ValueError:
                    continue
                cov_rows.append({"scope": scope, "level": level, "coverage": c.coverage, "n": c.n})
        write_csv_atomic(pd.DataFrame(cov_rows), coverage_out, float_format=FLOAT_FORMAT)
        return [metrics_out, coverage_out]

    return _run_stage(cfg, "evaluate", inputs, params, [metrics_out, coverage_out], body, force)


def run_pipeline(cfg: PipelineConfig, stages=STAGES, force=False):
    runners = {"downscale": downscale, "fit-shear": fit_shear, "fit-spatial": fit_spatial,
               "predict": predict, "evaluate": evaluate}
    for stage in stages:
        runners[stage](cfg, force=force)


# --- grid export --------------------------------------------------------------

def lattice(bbox, spacing):
    xmin, ymin, xmax, ymax = bbox
    if spacing <= 0:
        raise ValueError("lattice spacing must be positive")
    if xmax < xmin or ymax < ymin:
        raise ValueError("lattice is empty: bounding box has max below min")
    xs = np.arange(xmin, xmax + spacing / 2, spacing)
    ys = np.arange(ymin, ymax + spacing / 2, spacing)
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError("lattice is empty")
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _node_covariate(cfg, nodes, h, model):
    """Atlas covariate at lattice nodes: nearest cell of a gridded atlas when
    configured, otherwise inverse-distance weighting of the known sites."""
    grid_path = cfg.path(cfg.data.gwa_grid)
    if grid_path is not None and grid_path.exists():
        g = pd.read_csv(grid_path)
        cov = gwa_mean_at_height(g["mean50"].to_numpy(), g["mean100"].to_numpy(), h)
        gxy = g[["x_km", "y_km"]].to_numpy()
        nearest = np.argmin(((nodes[:, None, :] - gxy[None]) ** 2).sum(-1), axis=1)
        return cov[nearest]
    xy, cov = model.stations, model.gwa_mean_sqrt
    tpath = cfg.path(cfg.data.targets)
    if tpath is not None and tpath.exists():
        targets = read_targets(tpath, cfg.projection)
        xy = np.vstack([xy, targets[["x_km", "y_km"]].to_numpy()])
        cov = np.concatenate([cov, _target_covariate(targets, h)])
    d2 = ((nodes[:, None, :] - xy[None]) ** 2).sum(-1)
    w = 1.0 / np.maximum(d2, 1e-12)
    return (w * cov).sum(1) / w.sum(1)


def export_grid(cfg: PipelineConfig, month, height, bbox, spacing, timestamp=None, out=None,
                covariate=None):
    """Kriged speed map over a lattice for one row (``timestamp``) or the
    month average of per-row results (``timestamp=None``)."""
    model = FittedSpatialModel.load(_out(cfg, "spatial", _spatial_name(month, height)))
    nodes = lattice(bbox, spacing)
    if covariate is None:
        covariate = _node_covariate(cfg, nodes, height, model)
    est = pd.read_csv(_out(cfg, "station_estimates", f"{_height_tag(height)}.csv"),
                      dtype={"station_id": str})
    est["epoch"] = to_epoch_minutes(est["timestamp"])
    wide = est.pivot(index="epoch", columns="station_id", values="sqrt_est")
    wide = wide.reindex(columns=model.station_ids)
    wide = wide[month_of(wide.index.to_numpy()) == month]
    if timestamp is not None:
        epoch = int(to_epoch_minutes([timestamp])[0])
        if epoch not in wide.index:
            raise ValueError(f"no station data at {timestamp}")
        rows = wide.loc[[epoch]].to_numpy()
    else:
        rows = wide.to_numpy()
        if len(rows) == 0:
            raise ValueError(f"no station data in month {month}")
    res = predict_series(model, rows, nodes, covariate, cfg.interval_level)
    df = pd.DataFrame({"x_km": nodes[:, 0], "y_km": nodes[:, 1],
                       "speed_mean": res.speed_mean.mean(0), "lo": res.lo.mean(0),
                       "hi": res.hi.mean(0)})
    out = Path(out) if out else _out(cfg, "grids", f"{month}_{_height_tag(height)}"
                                     f"_{'mean' if timestamp is None else epoch}.csv")
    write_csv_atomic(df, out, float_format=FLOAT_FORMAT)
    return out
