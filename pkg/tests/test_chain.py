import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revclt import chain
from revclt.chain import (apply_q_odd, cond_sum, geometric_sum, nu_inverse_cdf, q_power_f, sample_nu,
                          sample_stationary, step, theta)
from revclt.rng import RngStream

from conftest import direct_geometric, direct_theta


def test_nu_inverse_cdf_boundaries():
    assert nu_inverse_cdf(0.5) == 0.0
    assert nu_inverse_cdf(0.0) == -1.0


def test_nu_inverse_cdf_matches_cdf():
    # CDF of |x| dx on [-1, 1]: F(x) = (1 - x^2)/2 for x < 0, (1 + x^2)/2 for x >= 0
    u = np.linspace(0.01, 0.99, 99)
    x = nu_inverse_cdf(u)
    F = np.where(x < 0, (1 - x ** 2) / 2, (1 + x ** 2) / 2)
    np.testing.assert_allclose(F, u, atol=1e-12)


def test_nu_second_moment_is_half():
    x = sample_nu(RngStream(1, 0), 10**6)
    v = x * x
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - 0.5) < 4 * se


def test_stationary_draws_are_uniform():
    x = sample_stationary(RngStream(2, 0), 10**5)
    assert x.min() >= -1.0 and x.max() < 1.0
    assert abs(x.mean()) < 4 * math.sqrt(1 / 3 / x.size)


def test_step_forced_jump_and_absorbing_zero():
    g = RngStream(3, 0).generator()
    assert all(step(1.0, g) != 1.0 for _ in range(200))
    assert all(step(0.0, g) == 0.0 for _ in range(200))
    with pytest.raises(ValueError):
        step(1.5, g)


def test_stay_fraction_is_half():
    g = RngStream(4, 0).generator()
    m = 10**6
    x = 2 * g.random(m) - 1
    stay = g.random(m) >= np.abs(x)
    # reuse the kernel: same rule as step(), vectorized over stationary starts
    frac = stay.mean()
    assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / m)
    # and step() itself on a smaller run
    g2 = RngStream(4, 1).generator()
    xs = 2 * g2.random(20000) - 1
    same = np.array([step(v, g2) == v for v in xs])
    assert abs(same.mean() - 0.5) < 4 * math.sqrt(0.25 / xs.size)


@pytest.mark.parametrize("x,k,expected", [(0.5, 0, 1.0), (0.5, 1, 0.5), (-0.25, 2, -0.5625)])
def test_q_power_f_examples(x, k, expected):
    assert q_power_f(x, k) == pytest.approx(expected, abs=1e-15)


def test_q_power_f_rejects_negative_power():
    with pytest.raises(ValueError):
        q_power_f(0.5, -1)


@pytest.mark.parametrize("x,n,expected", [(1.0, 7, 0.0), (0.5, 2, 0.75), (-0.5, 2, -0.75)])
def test_cond_sum_examples(x, n, expected):
    assert cond_sum(x, n) == pytest.approx(expected, abs=1e-15)


def test_apply_q_odd_examples():
    assert apply_q_odd(np.sign, 0.5) == 0.5
    assert apply_q_odd(np.sign, 1.0) == 0.0
    th3 = theta(0.5, 3)
    assert apply_q_odd(lambda y: theta(y, 3), 0.5) == pytest.approx(0.5 * th3, rel=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 50, 1000])
@pytest.mark.parametrize("x", [1e-12, 1e-9, 1e-6, 1e-4, 0.003, 0.3, 0.9, 1.0, -0.4])
def test_closed_forms_against_direct_sums(x, n):
    a = abs(x)
    assert geometric_sum(x, n) == pytest.approx(direct_geometric(a, n), rel=1e-12, abs=1e-300)
    assert theta(x, n) == pytest.approx(direct_theta(x, n), rel=1e-12)


def test_series_switch_is_continuous():
    n = 1000
    edge = chain.SERIES_SWITCH / n
    xs = np.array([edge * (1 - 1e-9), edge, edge * (1 + 1e-9)])
    th = theta(xs, n)
    assert np.all(np.abs(np.diff(th)) < 1e-9 * abs(th[1]))


def test_theta_at_zero_and_limits():
    assert theta(0.0, 5) == 0.0
    assert theta(1e-300, 5) == pytest.approx(3.0, rel=1e-12)   # (n+1)/2 at r = 1
    assert theta(0.5, 1) == 1.0
    assert theta(0.5, 2) == pytest.approx(1.25)
    assert theta(-0.5, 2) == pytest.approx(-1.25)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-1.0, 1.0, allow_nan=False), n=st.integers(1, 10**6))
def test_theta_odd_and_bounded(x, n):
    t = theta(x, n)
    assert theta(-x, n) == -t
    # every inner sum is at most min(i+1, 1/|x|)
    assert abs(t) <= min((n + 1) / 2, 1 / abs(x) if x else math.inf) * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-1.0, 1.0, allow_nan=False), n=st.integers(1, 10**6))
def test_theta_cond_sum_identity(x, n):
    # |x| theta_n(x) + cond_sum(x, n)/n = sign(x)
    lhs = abs(x) * theta(x, n) + cond_sum(x, n) / n
    assert lhs == pytest.approx(float(np.sign(x)), abs=1e-12)


def test_holding_time_law():
    a = 0.3
    u = 1.0 - RngStream(5, 0).generator().random(200000)
    tau = np.array([chain.holding_time(a, v, 1 << 62) for v in u])
    assert tau.min() >= 1
    for m in (1, 2, 5):
        p = (1 - a) ** m
        assert abs((tau > m).mean() - p) < 4 * math.sqrt(p * (1 - p) / tau.size)
    assert chain.holding_time(1.0, 0.3, 10) == 1
    assert chain.holding_time(0.0, 0.3, 10) == 10
