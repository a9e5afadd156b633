import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hubwind.distrib import (
    VerticalProfile,
    WeibullParams,
    build_empirical_cdf,
    densify_profile,
    densify_speeds,
    gwa_mean_at_height,
    mean_sqrt_wind,
    quantile_map,
    weibull_cdf,
    weibull_quantile,
)

ONE_MINUS_INV_E = 1 - math.exp(-1)


@pytest.mark.parametrize(
    "x, k, lam, expected",
    [(0.0, 2.0, 10.0, 0.0), (7.3, 1.7, 7.3, ONE_MINUS_INV_E), (10.0, 2.0, 10.0, ONE_MINUS_INV_E)],
)
def test_weibull_cdf(x, k, lam, expected):
    assert weibull_cdf(x, WeibullParams(k, lam)) == pytest.approx(expected, abs=1e-15)


def test_weibull_cdf_rejects_negative():
    with pytest.raises(ValueError):
        weibull_cdf(-1.0, WeibullParams(2, 10))


def test_weibull_params_validated():
    with pytest.raises(ValueError):
        WeibullParams(0.0, 1.0)
    with pytest.raises(ValueError):
        WeibullParams(1.0, -1.0)


@pytest.mark.parametrize(
    "p, expected",
    [
        (0.0, 0.0),
        (ONE_MINUS_INV_E, 10.0),
        # 10*sqrt(ln 2); matches mpmath findroot on the CDF to 30 digits
        (0.5, 8.32554611157697756),
    ],
)
def test_weibull_quantile(p, expected):
    assert weibull_quantile(p, WeibullParams(2.0, 10.0)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_weibull_quantile_domain(p):
    with pytest.raises(ValueError):
        weibull_quantile(p, WeibullParams(2, 10))


@given(st.floats(1e-3, 50), st.floats(0.5, 4), st.floats(1, 15))
def test_quantile_inverts_cdf(x, k, lam):
    params = WeibullParams(k, lam)
    p = weibull_cdf(x, params)
    # 1 - p below ~1e-6 loses the digits needed for 1e-9 relative recovery
    if p < 1 - 1e-6:
        assert weibull_quantile(p, params) == pytest.approx(x, rel=1e-9)


@given(st.floats(0, 0.999), st.floats(0.5, 4), st.floats(1, 15))
def test_cdf_inverts_quantile(p, k, lam):
    params = WeibullParams(k, lam)
    assert weibull_cdf(weibull_quantile(p, params), params) == pytest.approx(p, abs=1e-10)


@pytest.mark.parametrize(
    "k, lam, expected, tol",
    [
        # Monte-Carlo mean of sqrt(W) over 1e7 Weibull(2, 10) draws gave 2.86614
        (2.0, 10.0, 2.86614, 1e-3),
        (0.5, 1.0, 1.0, 1e-12),
        # Monte-Carlo over 1e7 Weibull(1, 4) draws gave 1.77240 (sqrt(pi) = 1.7724539)
        (1.0, 4.0, 1.77240, 1e-3),
    ],
)
def test_mean_sqrt_wind(k, lam, expected, tol):
    assert mean_sqrt_wind(WeibullParams(k, lam)) == pytest.approx(expected, abs=tol)


def test_mean_sqrt_wind_monte_carlo():
    rng = np.random.default_rng(11)
    draws = 10.0 * rng.weibull(2.0, 2_000_000)
    assert np.sqrt(draws).mean() == pytest.approx(mean_sqrt_wind(WeibullParams(2, 10)), abs=1e-3)


def test_empirical_cdf_plotting_position():
    ecdf = build_empirical_cdf([3, 1, 2, 4])
    assert ecdf(4.0) == pytest.approx(0.8)
    assert build_empirical_cdf([5, 5, 5])(5.0) == pytest.approx(0.5)
    assert build_empirical_cdf(np.arange(9.0))(0.0) == pytest.approx(0.1)


def test_empirical_cdf_needs_two_values():
    with pytest.raises(ValueError):
        build_empirical_cdf([1.0])
    with pytest.raises(ValueError):
        build_empirical_cdf([1.0, np.nan])


def test_empirical_cdf_strictly_inside_unit_interval():
    ecdf = build_empirical_cdf(np.random.default_rng(0).random(50))
    p = ecdf(ecdf.sorted_values)
    assert p.min() > 0 and p.max() < 1


def test_quantile_map_self_mapping():
    rng = np.random.default_rng(3)
    target = WeibullParams(2.1, 8.5)
    series = target.lam * rng.weibull(target.k, 10_000)
    mapped = quantile_map(series, target)
    ks = stats.kstest(mapped, lambda x: weibull_cdf(x, target)).statistic
    assert ks < 0.02
    assert np.array_equal(np.argsort(mapped, kind="stable"), np.argsort(series, kind="stable"))


def test_quantile_map_constant_series():
    target = WeibullParams(2.0, 10.0)
    out = quantile_map(np.full(7, 4.2), target)
    assert np.allclose(out, weibull_quantile(0.5, target))


def test_densify_example():
    # exact solve of the Vandermonde system: 5/2 + 9/100 h - h^2/2500
    dense = densify_profile(VerticalProfile((6.0, 7.0, 7.5)))
    assert dense.shape == (11, 2)
    assert np.array_equal(dense[:, 0], np.arange(50, 101, 5))
    assert dense[2, 1] == pytest.approx(323 / 50, rel=1e-12)


def test_densify_constant_and_knots():
    assert np.allclose(densify_profile(VerticalProfile((5.0, 5.0, 5.0)))[:, 1], 5.0)
    speeds = np.array([4.1, 6.3, 7.05])
    out = densify_speeds(speeds)
    assert out[0] == pytest.approx(4.1, rel=1e-10)
    assert out[5] == pytest.approx(6.3, rel=1e-10)
    assert out[10] == pytest.approx(7.05, rel=1e-10)


def test_densify_clamps_negative():
    out = densify_speeds(np.array([0.0, 3.0, 0.0]))
    assert np.all(out >= 0)
    out = densify_speeds(np.array([3.0, 0.1, 0.0]))
    assert np.all(out >= 0)


def test_densify_vectorised():
    rows = np.array([[6.0, 7.0, 7.5], [5.0, 5.0, 5.0]])
    out = densify_speeds(rows)
    assert out.shape == (2, 11)
    assert out[1] == pytest.approx(np.full(11, 5.0))


def test_gwa_mean_at_height():
    assert gwa_mean_at_height(6.0, 7.2, 100.0) == pytest.approx(7.2)
    assert gwa_mean_at_height(6.0, 7.2, 50.0) == pytest.approx(6.0)
    # log-log linear interpolation between (50, 6) and (100, 7.2) gives 6.789563098
    assert gwa_mean_at_height(6.0, 7.2, 80.0) == pytest.approx(6.789563098034291, rel=1e-12)
    with pytest.raises(ValueError):
        gwa_mean_at_height(0.0, 7.2, 80.0)
    with pytest.raises(ValueError):
        gwa_mean_at_height(6.0, 7.2, 120.0)


@settings(deadline=None, max_examples=10)
@given(st.floats(1.2, 3.0), st.floats(3.0, 12.0))
def test_sqrt_closure_moments(k, lam):
    rng = np.random.default_rng(5)
    roots = np.sqrt(lam * rng.weibull(k, 200_000))
    closed = WeibullParams(k, lam).sqrt_params()
    m1 = closed.lam * math.gamma(1 + 1 / closed.k)
    m2 = closed.lam**2 * math.gamma(1 + 2 / closed.k)
    assert roots.mean() == pytest.approx(m1, rel=5e-3)
    assert np.mean(roots**2) == pytest.approx(m2, rel=1e-2)
