import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from lart.kernels import (RngStream, log_std_normal_cdf, sample_truncated_normal, std_normal_cdf,
                          std_normal_quantile)

mpmath.mp.dps = 50


def mp_cdf(x):
    return mpmath.ncdf(mpmath.mpf(x))


def test_cdf_examples():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.959964) == pytest.approx(float(mp_cdf(1.959964)), abs=1e-15)
    assert abs(std_normal_cdf(1.959964) - 0.975) < 1e-6
    # Phi(-40) is below the smallest double; the log-space companion stays finite
    assert std_normal_cdf(-37.0) > 0
    assert np.isfinite(log_std_normal_cdf(-40.0))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_cdf_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        std_normal_cdf(bad)
    with pytest.raises(ValueError):
        log_std_normal_cdf(bad)


@given(st.floats(-30, 30))
def test_cdf_symmetry(x):
    assert std_normal_cdf(x) + std_normal_cdf(-x) == pytest.approx(1.0, abs=2e-16)


@given(st.floats(-8, 8), st.floats(-8, 8))
def test_cdf_monotone(x, y):
    if x < y:
        assert std_normal_cdf(x) <= std_normal_cdf(y)


def test_log_cdf_examples():
    assert log_std_normal_cdf(0.0) == pytest.approx(math.log(0.5), abs=1e-15)
    assert log_std_normal_cdf(-10.0) == pytest.approx(float(mpmath.log(mp_cdf(-10))), abs=1e-10)
    assert abs(log_std_normal_cdf(-10.0) + 53.2313) < 1e-3
    big = log_std_normal_cdf(40.0)
    assert big <= 0.0 and big > -1e-300


@pytest.mark.parametrize("x", [-8.0, -9.5, -15.0, -38.0, -100.0, -1e3])
def test_log_cdf_tail_matches_extended_precision(x):
    expected = float(mpmath.log(mp_cdf(x)))
    assert log_std_normal_cdf(x) == pytest.approx(expected, rel=1e-12)


@given(st.floats(-8, 8))
def test_log_cdf_agrees_with_log_of_cdf(x):
    assert abs(log_std_normal_cdf(x) - math.log(std_normal_cdf(x))) < 1e-12


def test_log_cdf_vectorised():
    x = np.array([-50.0, -8.0, 0.0, 3.0])
    out = log_std_normal_cdf(x)
    assert out.shape == (4,)
    assert np.all(np.diff(out) > 0)


def test_quantile_examples():
    assert std_normal_quantile(0.5) == 0.0
    root = optimize.brentq(lambda z: float(mp_cdf(z) - mpmath.mpf("1e-9")), -7, -5, xtol=1e-14)
    assert std_normal_quantile(1e-9) == pytest.approx(root, abs=1e-9)
    assert abs(std_normal_quantile(1e-9) + 5.9978) < 1e-3


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_quantile_domain(p):
    with pytest.raises(ValueError):
        std_normal_quantile(p)


def test_quantile_round_trip_grid():
    p = np.concatenate([np.logspace(-9, -1, 200), np.linspace(0.1, 0.9, 200), 1 - np.logspace(-1, -9, 200)])
    # 1 - p loses absolute precision near 1, so compare through the upper tail there
    z = std_normal_quantile(p)
    lower = p <= 0.5
    back = np.where(lower, std_normal_cdf(z), 1 - std_normal_cdf(-z))
    assert np.allclose(back[lower], p[lower], rtol=1e-10, atol=0)
    q = 1 - p[~lower]
    assert np.allclose(std_normal_cdf(-z[~lower]), q, rtol=1e-6, atol=0)


def test_truncated_half_normal_mean():
    x = sample_truncated_normal(RngStream(1, 0), 0.0, 1.0, 0.0, np.inf, size=1_000_000)
    assert x.min() > 0
    assert abs(x.mean() - math.sqrt(2 / math.pi)) < 3e-3


def test_truncated_untruncated_moments():
    x = sample_truncated_normal(RngStream(2, 0), 1.5, 2.0, -np.inf, np.inf, size=400_000)
    se = 2.0 / math.sqrt(x.size)
    assert abs(x.mean() - 1.5) < 4 * se
    assert abs(x.std() - 2.0) < 0.01


def test_truncated_deep_tail():
    x = sample_truncated_normal(RngStream(3, 0), 0.0, 1.0, 8.0, np.inf, size=200_000)
    assert x.min() >= 8.0
    tail_mean = stats.norm.pdf(8) / stats.norm.sf(8)
    assert tail_mean == pytest.approx(float(mpmath.npdf(8) / (1 - mp_cdf(8))), rel=1e-12)
    assert abs(x.mean() - tail_mean) < 4 * x.std() / math.sqrt(x.size)


def test_truncated_scalar_and_errors():
    v = sample_truncated_normal(RngStream(0, 0), 0.0, 1.0, -1.0, 1.0)
    assert isinstance(v, float) and -1 < v < 1
    with pytest.raises(ValueError):
        sample_truncated_normal(RngStream(0, 0), 0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        sample_truncated_normal(RngStream(0, 0), 0.0, 1.0, 1.0, 1.0)


def test_truncated_ks_random_cases():
    gen = np.random.default_rng(7)
    for case in range(10):
        mean, sd = gen.normal(0, 2), gen.uniform(0.2, 3)
        kind = case % 4
        lo = gen.normal(mean, 2 * sd)
        if kind == 0:
            lower, upper = lo, np.inf
        elif kind == 1:
            lower, upper = -np.inf, lo
        elif kind == 2:
            lower, upper = lo, lo + gen.uniform(0.1, 3) * sd
        else:
            lower, upper = mean + 4 * sd, np.inf  # tail branch
        x = sample_truncated_normal(RngStream(100 + case, 0), mean, sd, lower, upper, size=100_000)
        assert np.all((x >= lower) & (x <= upper))
        ref = stats.truncnorm((lower - mean) / sd, (upper - mean) / sd, loc=mean, scale=sd)
        assert stats.kstest(x, ref.cdf).pvalue > 0.001, (case, mean, sd, lower, upper)


def test_rng_stream_determinism():
    a = RngStream(42, 7).generator.random(1000).tobytes()
    b = RngStream(42, 7).generator.random(1000).tobytes()
    assert a == b
    c = RngStream(42, 8).generator.random(1000)
    assert np.frombuffer(a) .tolist() != c.tolist()
    assert abs(np.corrcoef(np.frombuffer(a), c)[0, 1]) < 0.1


def test_rng_stream_children_distinct():
    s = RngStream(5, 1)
    assert s.child(2).stream_id == (1, 2)
    x = s.child(2).normal(100)
    y = s.child(3).normal(100)
    assert not np.array_equal(x, y)
    assert np.array_equal(RngStream(5, (1, 2)).normal(100), x)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-6, 6), st.floats(0.01, 6))
def test_truncated_draws_respect_bounds(mean, sd, lower, width):
    x = sample_truncated_normal(RngStream(0, 0), mean, sd, lower, lower + width, size=200)
    assert np.all(x >= lower) and np.all(x <= lower + width)
