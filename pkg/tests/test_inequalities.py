import math

import pytest

from revclt.analytics import exact_sigma2
from revclt.inequalities import (FAIL, INCONCLUSIVE, PASS, InequalityReport, check_lp, check_tail,
                                 dyadic_grid)
from revclt.simulation import MonteCarloEstimate


def test_lp_single_step():
    r = check_lp(2.0, 1, 1000, 1)
    assert r.lhs.mean == 1.0
    assert r.rhs.mean == 12.0
    assert r.verdict == PASS


@pytest.mark.parametrize("p,n", [(2.0, 1000), (4.0, 100), (1.5, 100)])
def test_lp_passes(p, n):
    r = check_lp(p, n, 10**4, 3)
    assert r.verdict == PASS
    assert r.margin > 0


def test_tail_beyond_support_is_zero():
    r = check_tail(13 * 10 + 1, 10, 2000, 2)
    assert r.lhs.mean == 0.0
    assert r.verdict == PASS


def test_tail_at_two_sigma():
    r = check_tail(2 * math.sqrt(exact_sigma2(1000)), 1000, 10**4, 5)
    assert r.verdict == PASS


def test_tail_small_x_is_vacuous():
    assert check_tail(0.1, 10, 1000, 6).vacuous


def test_verdict_rules():
    def rep(lhs, rhs, reps=5000):
        return InequalityReport("lp", 10, 2.0, None,
                                MonteCarloEstimate.from_moments(lhs, 0.01, reps),
                                MonteCarloEstimate.exact(rhs), 0)

    assert rep(1.0, 2.0).verdict == PASS
    assert rep(2.0, 1.0).verdict == FAIL
    assert rep(1.0, 1.01).verdict == INCONCLUSIVE
    assert rep(1.0, 2.0, reps=100).verdict == INCONCLUSIVE
    assert rep(2.0, 1.0, reps=100).verdict == FAIL


def test_invalid_arguments():
    with pytest.raises(ValueError):
        check_lp(1.0, 10, 100, 0)
    with pytest.raises(ValueError):
        check_tail(0.0, 10, 100, 0)


def test_dyadic_grid():
    assert dyadic_grid(1) == [1]
    assert dyadic_grid(10) == [1, 2, 4, 8, 10]
    assert dyadic_grid(8) == [1, 2, 4, 8]
