"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line; the lines
are repeated in the pytest terminal summary."""

import hashlib
import math
import time

import numpy as np
import pandas as pd
import pytest
from scipy import stats
from scipy.special import k1

from oracles import condition_naive, covariance_naive, k1_mp, loglik_naive
from hubwind import pipeline
from hubwind.config import load_config
from hubwind.distrib import WeibullParams, quantile_map
from hubwind.evaluation import compute_metrics, wake_adjust
from hubwind.shear import (
    ConstantAlphaModel,
    ShearTrainingSet,
    fit_additive_model,
    fit_harmonic_alpha,
)
from hubwind.spatial import (
    FittedSpatialModel,
    MonthlyDataset,
    SpatialHyperparams,
    fit_hyperparams,
    krige_predict,
    log_likelihood,
    matern_nu1,
    simulate_replicates,
)
from hubwind.synthetic import ShearTruth, shear_training_arrays


# 1 ---------------------------------------------------------------------------

def test_criterion_01_shear_model_ordering(acceptance):
    truth = ShearTruth()
    rng = np.random.default_rng(101)
    n_times = 5700  # 80% train -> 4560 times x 11 dense heights = 50,160 rows per station
    sse = {"constant": 0.0, "harmonic": 0.0, "additive": 0.0}
    n_obs, rows = 0, []
    start = time.perf_counter()
    for station in range(5):
        shape, scale = rng.uniform(1.8, 2.4), rng.uniform(5.0, 8.0)
        w10, levels, hour, direction = shear_training_arrays(truth, n_times, rng, (shape, scale))
        cut = int(0.8 * n_times)
        train = ShearTrainingSet.from_profiles(w10[:cut], levels[:cut], hour[:cut], direction[:cut])
        rows.append(len(train))
        models = {"constant": ConstantAlphaModel(), "harmonic": fit_harmonic_alpha(train),
                  "additive": fit_additive_model(train)}
        for name, model in models.items():
            for j, h in enumerate((50.0, 75.0, 100.0)):
                err = model.predict_speed(w10[cut:], h, hour[cut:], direction[cut:]) - levels[cut:, j]
                sse[name] += float(err @ err)
        n_obs += 3 * (n_times - cut)
    elapsed = time.perf_counter() - start
    rmse = {k: math.sqrt(v / n_obs) for k, v in sse.items()}
    ok = (rmse["additive"] < rmse["harmonic"] < rmse["constant"]
          and rmse["additive"] <= 0.85 * rmse["harmonic"] and elapsed < 120)
    acceptance(1, ok, f"holdout RMSE constant={rmse['constant']:.3f} harmonic={rmse['harmonic']:.3f} "
                      f"additive={rmse['additive']:.3f} (ratio {rmse['additive'] / rmse['harmonic']:.3f}), "
                      f"{min(rows)}-{max(rows)} rows/station, {elapsed:.1f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_02_quantile_mapping_fidelity(acceptance):
    rng = np.random.default_rng(202)
    # biased, differently shaped source: gamma rather than Weibull
    source = rng.gamma(3.0, 2.1, 10_000)
    target = WeibullParams(2.2, 8.3)
    mapped = quantile_map(source, target)
    ks = stats.kstest(mapped, stats.weibull_min(target.k, scale=target.lam).cdf).statistic
    ranks_kept = np.array_equal(np.argsort(source, kind="stable"), np.argsort(mapped, kind="stable"))
    ok = ks < 0.02 and ranks_kept
    acceptance(2, ok, f"KS statistic {ks:.5f} (< 0.02), rank order preserved: {ranks_kept}")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_03_square_root_closure(acceptance):
    rng = np.random.default_rng(303)
    lam = 7.5
    x = np.sqrt(lam * rng.weibull(2.0, 1_000_000))
    # oracle: raw moments of Weibull(4, sqrt(lam)) are lam^(r/2) * Gamma(1 + r/4)
    errs = []
    for r in (1, 2, 3, 4):
        expected = lam ** (r / 2) * math.gamma(1 + r / 4)
        errs.append(abs(np.mean(x**r) / expected - 1))
    ok = max(errs) < 0.005
    acceptance(3, ok, "relative error of raw moments 1-4: " + ", ".join(f"{e:.2e}" for e in errs))
    assert ok


# 4 ---------------------------------------------------------------------------

def _instance(rng, n_s, n_t):
    xy = rng.uniform(0, 150, (n_s, 2))
    theta = SpatialHyperparams(rng.uniform(0.005, 0.1), rng.uniform(0.2, 1.0), rng.uniform(0.0, 0.3),
                               rng.normal(0.5, 0.3), rng.uniform(0.5, 1.2))
    gam = rng.uniform(0.0, 0.05, n_s)
    gwa = rng.uniform(1.8, 2.8, n_s)
    Y = rng.normal(2.5, 0.6, (n_t, n_s))
    return xy, theta, gam, gwa, Y


def test_criterion_04_likelihood_oracle(acceptance):
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(20):
        n_s, n_t = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        xy, theta, gam, gwa, Y = _instance(rng, n_s, n_t)
        ours = log_likelihood(MonthlyDataset(xy, Y, gam, gwa), theta)
        C = covariance_naive(xy, theta.kappa, theta.sigma_f, theta.sigma_eps, gam)
        ref = loglik_naive(Y, theta.beta0 + theta.beta1 * gwa, C)
        worst = max(worst, abs(ours - ref) / abs(ref))
    ok = worst < 1e-8
    acceptance(4, ok, f"worst relative difference to dense evaluation {worst:.2e} over 20 instances")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_05_kriging_oracle(acceptance):
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(20):
        n_s = int(rng.integers(2, 7))
        xy, theta, gam, gwa, Y = _instance(rng, n_s, 1)
        n_tg = int(rng.integers(1, 5))
        targets = rng.uniform(0, 150, (n_tg, 2))
        tgwa = rng.uniform(1.8, 2.8, n_tg)
        model = FittedSpatialModel(theta, xy, gam, gwa)
        res = krige_predict(model, Y[0], targets, tgwa)
        mean, var = condition_naive(xy, targets, Y[0], model.mean, theta.beta0 + theta.beta1 * tgwa,
                                    theta.kappa, theta.sigma_f, theta.sigma_eps, gam)
        worst = max(worst, np.max(np.abs(res.sqrt_mean - mean) / np.abs(mean)),
                    np.max(np.abs(res.sqrt_var - var) / np.abs(var)))
    # noiseless: predictions at the stations reproduce the observations
    noiseless = 0.0
    for _ in range(20):
        n_s = int(rng.integers(2, 7))
        xy, theta, _, gwa, Y = _instance(rng, n_s, 1)
        theta = SpatialHyperparams(theta.kappa, theta.sigma_f, 0.0, theta.beta0, theta.beta1)
        model = FittedSpatialModel(theta, xy, np.zeros(n_s), gwa)
        res = krige_predict(model, Y[0], xy, gwa)
        noiseless = max(noiseless, np.max(np.abs(res.sqrt_mean - Y[0])))
    ok = worst < 1e-8 and noiseless < 1e-8
    acceptance(5, ok, f"worst relative difference to joint-MVN conditioning {worst:.2e}; "
                      f"noiseless station error {noiseless:.2e}")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_06_hyperparameter_recovery(acceptance):
    rng = np.random.default_rng(606)
    truth = SpatialHyperparams(kappa=0.02, sigma_f=0.5, sigma_eps=0.1, beta0=1.0, beta1=0.6)
    n_s, n_t = 25, 500
    xy = rng.uniform(0, 300, (n_s, 2))
    gam = rng.uniform(0.005, 0.02, n_s)
    gwa = rng.uniform(2.0, 2.8, n_s)
    Y = simulate_replicates(xy, truth, gam, gwa, n_t, rng)
    start = time.perf_counter()
    fit = fit_hyperparams(MonthlyDataset(xy, Y, gam, gwa))
    elapsed = time.perf_counter() - start
    t = fit.theta
    rel = {"kappa": abs(t.kappa / truth.kappa - 1), "sigma_f": abs(t.sigma_f / truth.sigma_f - 1),
           "beta0": abs(t.beta0 / truth.beta0 - 1), "beta1": abs(t.beta1 / truth.beta1 - 1)}
    ok = (rel["kappa"] < 0.15 and rel["sigma_f"] < 0.15 and rel["beta0"] < 0.05
          and rel["beta1"] < 0.05 and elapsed < 60)
    acceptance(6, ok, "relative errors " + ", ".join(f"{k}={v:.3f}" for k, v in rel.items())
               + f", fit {elapsed:.2f}s")
    assert ok


# 7, 8, 10 share end-to-end synthetic runs ------------------------------------

CONFIG = "workdir: out\nseed: 20230101\n"


def _run(root):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cfg.yaml").write_text(CONFIG)
    cfg = load_config(root / "cfg.yaml", deterministic=True)
    pipeline.simulate(cfg)
    pipeline.run_pipeline(cfg)
    return cfg


@pytest.fixture(scope="module")
def end_to_end(tmp_path_factory):
    return _run(tmp_path_factory.mktemp("e2e_a"))


def test_criterion_07_coverage_calibration(end_to_end, acceptance):
    cov = pd.read_csv(end_to_end.work / "coverage.csv").query("scope == 'ALL'").set_index("level")
    n = int(cov["n"].min())
    gaps = {lvl: cov.loc[lvl, "coverage"] - lvl for lvl in (0.80, 0.95)}
    ok = n >= 10_000 and all(abs(g) <= 0.03 for g in gaps.values())
    acceptance(7, ok, f"coverage {cov.loc[0.80, 'coverage']:.4f} at 80%, "
                      f"{cov.loc[0.95, 'coverage']:.4f} at 95% on {n} held-out observations")
    assert ok


def test_criterion_08_wake_invariance(end_to_end, acceptance):
    pred = pd.read_csv(end_to_end.work / "predictions.csv")
    obs = pd.read_csv(end_to_end.path(end_to_end.data.farm_obs))
    merged = pred.merge(obs, on=["site_id", "timestamp"])
    p, o = merged["speed_mean"].to_numpy(), merged["speed_ms"].to_numpy()
    base = compute_metrics(p, o)
    worst_r, worst_b = 0.0, 0.0
    for f in (0.10, 0.15, 0.20):
        adj = compute_metrics(wake_adjust(p, f), o)
        worst_r = max(worst_r, abs(adj.pearson - base.pearson))
        shift = base.mean_bias - adj.mean_bias
        worst_b = max(worst_b, abs(shift - f * p.mean()) / (f * p.mean()))
    ok = worst_r < 1e-12 and worst_b < 1e-12
    acceptance(8, ok, f"max Pearson change {worst_r:.1e}; bias shift equals factor x mean(pred) "
                      f"to {worst_b:.1e} relative")
    assert ok


def test_criterion_10_determinism(end_to_end, tmp_path, acceptance):
    again = _run(tmp_path / "e2e_b")

    def digest(cfg):
        return {p.relative_to(cfg.work).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(cfg.work.rglob("*")) if p.is_file() and ".stamps" not in p.parts}

    a, b = digest(end_to_end), digest(again)
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and len(a) > 0
    acceptance(10, ok, f"{len(a)} output files compared, {len(differing)} differ")
    assert ok


# 9 ---------------------------------------------------------------------------

def test_criterion_09_matern_limit_and_bessel(acceptance):
    kappa, sigma_f = 0.037, 0.61
    limit = abs(matern_nu1(1e-8 / kappa, kappa, sigma_f) - sigma_f**2) / sigma_f**2
    xs = np.geomspace(1e-6, 50.0, 400)
    ours = k1(xs)
    ref = np.array([k1_mp(x) for x in xs])
    worst = float(np.max(np.abs(ours - ref) / ref))
    ok = limit < 1e-6 and worst < 1e-10
    acceptance(9, ok, f"small-distance limit error {limit:.2e}; K1 vs arbitrary precision "
                      f"worst relative {worst:.2e} over [1e-6, 50]")
    assert ok
