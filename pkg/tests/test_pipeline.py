import hashlib
import json
import logging

import numpy as np
import pandas as pd
import pytest

from hubwind import pipeline
from hubwind.cli import main
from hubwind.config import load_config
from hubwind.ingest import PREDICTION_COLUMNS
from hubwind.spatial import FittedSpatialModel, SpatialHyperparams, back_transform

SIM = """\
workdir: out
seed: 11
simulation:
  n_stations: 6
  n_targets: 3
  months: ['2023-04', '2023-05']
  days_per_month: 2
  reanalysis_days: 30
  hourly_stations: 1
shear:
  k_wind: 10
  k_height: 6
  k_tensor: 4
"""
STAMP = "2023-01-15T12:00:00Z"


def _make(root):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cfg.yaml").write_text(SIM)
    cfg = load_config(root / "cfg.yaml")
    pipeline.simulate(cfg)
    return cfg


def _outputs(cfg):
    return {p.relative_to(cfg.work).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(cfg.work.rglob("*")) if p.is_file() and ".stamps" not in p.parts}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    cfg = _make(tmp_path_factory.mktemp("pipe"))
    pipeline.run_pipeline(cfg)
    return cfg


def test_all_stage_outputs_written(run):
    out = _outputs(run)
    for name in ["downscaled.csv", "shear_report.csv", "hyperparams.csv", "predictions.csv",
                 "metrics.csv", "coverage.csv"]:
        assert name in out
    heights = set(pd.read_csv(run.path(run.data.targets))["hub_height_m"])
    assert {k for k in out if k.startswith("station_estimates/")} == {
        f"station_estimates/h{h:g}.csv" for h in heights}
    assert sum(k.startswith("shear/") for k in out) == 6
    hyper = pd.read_csv(run.work / "hyperparams.csv")
    assert set(hyper["month"]) == {"2023-04", "2023-05"}
    assert sum(k.startswith("spatial/") for k in out) == len(hyper)


def test_predictions_schema_and_reload(run):
    pred = pd.read_csv(run.work / "predictions.csv")
    assert list(pred.columns) == PREDICTION_COLUMNS
    assert len(pred) == 3 * 2 * 2 * 144
    assert np.all(pred["lo"] <= pred["speed_mean"]) and np.all(pred["speed_mean"] <= pred["hi"])
    speed, lo, hi = back_transform(pred["sqrt_mean"], pred["sqrt_var"], run.interval_level)
    np.testing.assert_allclose(speed, pred["speed_mean"], rtol=1e-8)
    np.testing.assert_allclose(hi, pred["hi"], rtol=1e-8)
    for path in sorted((run.work / "spatial").glob("*.json")):
        model = FittedSpatialModel.load(path)
        assert model.station_ids == [f"S{i:02d}" for i in range(6)]


def test_reports(run):
    metrics = pd.read_csv(run.work / "metrics.csv")
    assert set(metrics["source"]) == {"model", "baseline"}
    assert set(metrics["wake_loss"]) == {0.0, 0.10, 0.15, 0.20}
    allm = metrics.query("source == 'model' and scope == 'ALL'")
    # wake scaling leaves correlation unchanged
    assert allm["pearson"].max() - allm["pearson"].min() < 1e-9
    cov = pd.read_csv(run.work / "coverage.csv")
    assert set(cov["level"]) == {0.8, 0.95}
    shear = pd.read_csv(run.work / "shear_report.csv")
    assert set(shear.query("station_id == 'ALL'")["model"]) == {"constant_alpha", "harmonic_alpha",
                                                                "additive"}


def test_rerun_skips_and_input_change_reruns(run, caplog):
    before = {p: p.stat().st_mtime_ns for p in run.work.rglob("*.csv")}
    with caplog.at_level(logging.INFO, logger="hubwind.pipeline"):
        pipeline.run_pipeline(run)
    assert caplog.text.count("up to date") == len(pipeline.STAGES)
    assert {p: p.stat().st_mtime_ns for p in run.work.rglob("*.csv")} == before
    cfg = load_config(run.base_dir + "/cfg.yaml", interval_level=0.9)
    caplog.clear()
    with caplog.at_level(logging.INFO, logger="hubwind.pipeline"):
        pipeline.run_pipeline(cfg, stages=["predict"])
    assert "[predict] running" in caplog.text
    pipeline.run_pipeline(run, stages=["predict"])


def test_deleted_intermediates_rebuilt_identically(tmp_path):
    cfg = _make(tmp_path / "a")
    pipeline.run_pipeline(cfg)
    first = _outputs(cfg)
    (cfg.work / "downscaled.csv").unlink()
    (cfg.work / "predictions.csv").unlink()
    pipeline.run_pipeline(cfg)
    assert _outputs(cfg) == first

    other = _make(tmp_path / "b")
    pipeline.run_pipeline(other)
    assert _outputs(other) == first


def test_missing_month_skipped(tmp_path, caplog):
    cfg = _make(tmp_path)
    pipeline.run_pipeline(cfg, stages=["downscale", "fit-shear"])
    cfg.months = ["2023-04", "2030-01"]
    with caplog.at_level(logging.WARNING, logger="hubwind.pipeline"):
        pipeline.fit_spatial(cfg)
    assert "2030-01" in caplog.text
    assert set(pd.read_csv(cfg.work / "hyperparams.csv")["month"]) == {"2023-04"}


def test_stage_errors_are_tagged(tmp_path):
    cfg = _make(tmp_path)
    with pytest.raises(pipeline.StageError, match=r"^\[fit-shear\]"):
        pipeline.fit_shear(cfg)
    (tmp_path / "data" / "reanalysis.csv").write_text("station_id,timestamp,w10\n")
    with pytest.raises(pipeline.StageError, match=r"^\[downscale\].*w50"):
        pipeline.downscale(cfg)


# --- grid export ---------------------------------------------------------------

@pytest.fixture
def grid_cfg(tmp_path):
    (tmp_path / "cfg.yaml").write_text("workdir: out\ndata:\n  targets: none.csv\n")
    cfg = load_config(tmp_path / "cfg.yaml")
    theta = SpatialHyperparams(kappa=0.05, sigma_f=0.4, sigma_eps=0.0, beta0=0.2, beta1=0.9)
    xy = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    model = FittedSpatialModel(theta, xy, np.zeros(3), np.array([2.3, 2.4, 2.5]), month="2023-01",
                               height=80.0, station_ids=["A", "B", "C"])
    (cfg.work / "spatial").mkdir(parents=True)
    model.save(cfg.work / "spatial" / "2023-01_h80.json")
    est = pd.DataFrame({"station_id": ["A", "B", "C"], "timestamp": [STAMP] * 3,
                        "sqrt_est": [2.0, 2.9, 2.6]})
    (cfg.work / "station_estimates").mkdir()
    est.to_csv(cfg.work / "station_estimates" / "h80.csv", index=False)
    return cfg, model


def test_export_grid_node_count_and_station_reproduction(grid_cfg):
    cfg, model = grid_cfg
    # inverse-distance covariate equals the station's own value on its node
    out = pipeline.export_grid(cfg, "2023-01", 80, (0, 0, 20, 40), 10.0)
    grid = pd.read_csv(out)
    assert list(grid.columns) == ["x_km", "y_km", "speed_mean", "lo", "hi"]
    assert len(grid) == 3 * 5
    at = grid.set_index(["x_km", "y_km"])
    for (x, y), s in zip(model.stations, [2.0, 2.9, 2.6]):
        # zero noise: the lattice node on a station reproduces it
        assert at.loc[(x, y), "speed_mean"] == pytest.approx(s**2, rel=1e-6)
        assert at.loc[(x, y), "hi"] - at.loc[(x, y), "lo"] < 1e-3


def test_export_grid_far_field_is_prior(grid_cfg):
    cfg, model = grid_cfg
    out = pipeline.export_grid(cfg, "2023-01", 80, (1e5, 1e5, 1e5, 1e5), 1.0,
                               timestamp=STAMP, covariate=np.array([2.4]))
    row = pd.read_csv(out).iloc[0]
    m = 0.2 + 0.9 * 2.4
    v = 0.4**2
    speed, lo, hi = back_transform(m, v, cfg.interval_level)
    assert row["speed_mean"] == pytest.approx(speed, rel=1e-9)
    assert (row["lo"], row["hi"]) == pytest.approx((lo, hi), rel=1e-9)


def test_export_grid_idw_covariate_and_empty_lattice(grid_cfg):
    cfg, _ = grid_cfg
    grid = pd.read_csv(pipeline.export_grid(cfg, "2023-01", 80, (0, 0, 0, 0), 5.0))
    assert len(grid) == 1
    with pytest.raises(ValueError, match="empty"):
        pipeline.export_grid(cfg, "2023-01", 80, (10, 0, 0, 10), 5.0)
    with pytest.raises(ValueError, match="no station data"):
        pipeline.export_grid(cfg, "2023-01", 80, (0, 0, 0, 0), 5.0, timestamp="2023-01-02T00:00:00Z")
    with pytest.raises(ValueError):
        pipeline.lattice((0, 0, 1, 1), 0.0)


# --- command line ---------------------------------------------------------------

def test_cli_end_to_end_and_errors(tmp_path, capsys):
    (tmp_path / "cfg.yaml").write_text(SIM)
    cfg_path = str(tmp_path / "cfg.yaml")
    assert main(["predict", "--config", cfg_path]) == 1
    assert "[predict]" in capsys.readouterr().err
    assert main(["simulate", "--config", cfg_path, "--seed", "4"]) == 0
    truth = json.loads((tmp_path / "data" / "truth.json").read_text())
    assert truth["seed"] == 4
    for stage in pipeline.STAGES:
        assert main([stage, "--config", cfg_path, "--months", "2023-04"]) == 0
    assert set(pd.read_csv(tmp_path / "out" / "hyperparams.csv")["month"]) == {"2023-04"}
    h = str(pd.read_csv(tmp_path / "data" / "targets.csv")["hub_height_m"].iloc[0])
    assert main(["export-grid", "--config", cfg_path, "--month", "2023-04", "--height", h,
                 "--bbox", "0,0,300,300", "--spacing", "100"]) == 0
    assert len(pd.read_csv(capsys.readouterr().out.strip())) == 16
    assert main(["export-grid", "--config", cfg_path, "--month", "2023-04", "--height", h,
                 "--bbox", "0,0,300", "--spacing", "100"]) == 1
    assert "[export-grid]" in capsys.readouterr().err
    assert main(["run", "--config", cfg_path, "--threads", "2", "--no-deterministic"]) == 0
