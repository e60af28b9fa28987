import numpy as np
import pytest

from revclt.analytics import exact_cond_norms, exact_sigma2
from revclt.chain import cond_sum, theta
from revclt.decomposition import (conditional_mean_of_difference, decompose_fb, decompose_forward,
                                  exact_martingale_variance, martingale_property_check, nu_integral,
                                  pairwise_residuals, remainder_l1, theta_eval)
from revclt.rng import RngStream
from revclt.simulation import Trajectory, simulate_direct


def constant_path(x, m):
    return Trajectory.from_states(np.full(m + 1, x))


@pytest.mark.parametrize("n,x,expected", [(1, 0.5, 1.0), (2, 0.5, 1.25), (2, -0.5, -1.25)])
def test_theta_eval_examples(n, x, expected):
    assert theta_eval(n, x) == pytest.approx(expected)


def test_constant_path_forward():
    rec = decompose_forward(constant_path(0.5, 3), 2)
    assert rec.S[-1] == 3
    assert rec.M[-1] + rec.R[-1] == pytest.approx(3.0, abs=1e-12)
    assert rec.residual_fwd < 1e-12


def test_constant_path_forward_backward():
    rec = decompose_fb(constant_path(0.5, 2), 2)
    assert rec.residual_fb < 1e-12


def test_n1_hand_expansion(stream):
    traj = simulate_direct(40, stream)
    rec = decompose_forward(traj, 1)
    X = np.sign(traj.states)
    r = 1 - np.abs(traj.states)
    np.testing.assert_allclose(rec.D, X[1:] - r[:-1] * X[:-1], atol=1e-15)
    np.testing.assert_allclose(rec.R[1:], np.cumsum(cond_sum(traj.states[:-1], 1)),
                               atol=1e-12)
    assert rec.identities_hold()


@pytest.mark.parametrize("n", [1, 10, 100])
@pytest.mark.parametrize("m", [1, 50, 500])
def test_identities_on_simulated_paths(n, m):
    for i in range(5):
        rec = decompose_fb(simulate_direct(m, RngStream(n * 1000 + m, i)), n)
        assert rec.residual_fwd < 1e-8
        assert rec.residual_fb < 1e-8
        assert np.max(np.abs(pairwise_residuals(rec))) < 1e-10


def test_pairwise_needs_backward_part(stream):
    with pytest.raises(ValueError):
        pairwise_residuals(decompose_forward(simulate_direct(3, stream), 2))


def test_record_rows_shape(stream):
    rec = decompose_fb(simulate_direct(4, stream), 3)
    rows = rec.rows()
    assert len(rows) == 5
    assert rows[0]["D"] is None and rows[-1]["D_tilde"] is None
    assert set(rows[0]) == set(rec.CSV_COLUMNS)


def test_nu_integral_moments():
    assert nu_integral(lambda y: np.ones_like(y)) == pytest.approx(1.0, rel=1e-14)
    assert nu_integral(lambda y: y * y) == pytest.approx(0.5, rel=1e-14)
    assert nu_integral(lambda y: theta(y, 7)) == pytest.approx(0.0, abs=1e-14)


def test_conditional_mean_cancels():
    assert abs(conditional_mean_of_difference(5, 0.7)) < 1e-10
    grid = np.linspace(-1, 1, 1000)
    assert np.max(np.abs(conditional_mean_of_difference(100, grid))) < 1e-10


def test_martingale_check_lag_correlations():
    mc = martingale_property_check(50, 10**5, 4)
    assert mc.analytic_max_abs < 1e-10
    for est in mc.lag_corr:
        assert est.within(0.0)


def test_martingale_variance_ratio_at_1000():
    mc = martingale_property_check(1000, 1000, 8, var_reps=2000)
    assert 0.5 < mc.var_ratio_exact < 1.5
    assert mc.var_ratio.within(mc.var_ratio_exact)


def test_exact_martingale_variance_small_n():
    # n = 1: D = X_1 - (1-|xi_0|) X_0 and E D^2 = 1 - E(1-|x|)^2 = 2/3
    assert exact_martingale_variance(1) == pytest.approx(2 / 3, rel=1e-10)


def test_remainder_is_small_against_cond_norm():
    est = remainder_l1(100, 4000, 12)
    assert est.mean < 3 * exact_cond_norms(100).l1
    assert est.mean < np.sqrt(exact_sigma2(100))
