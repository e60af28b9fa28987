"""Monte Carlo checks of the maximal inequalities for reversible chains.

Both sides of each inequality are estimated with 99% intervals. A check
passes only when the intervals separate (``lhs.ci_high <= rhs.ci_low``); it
fails when they separate the wrong way and is inconclusive otherwise.

For the sign functional ``|X_i| = 1`` almost surely, so ``||max|X_i| ||_p = 1``
is substituted exactly, as are ``sigma_n`` and ``||E_0(S_i)||_1 = H_{i+1} - 1``
(both increasing in ``i``, so their maxima over ``i <= n`` sit at ``n``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytics import exact_cond_norms, exact_sigma2
from .simulation import MonteCarloEstimate, PathSampler

MIN_CONCLUSIVE_REPS = 1000

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass
class InequalityReport:
    kind: str  # "lp" or "tail"
    n: int
    p: float | None
    x: float | None
    lhs: MonteCarloEstimate
    rhs: MonteCarloEstimate
    master_seed: int
    vacuous: bool = False
    note: str = ""

    COLUMNS = ("kind", "p_or_x", "n", "lhs_mean", "lhs_se", "rhs_mean", "rhs_se", "margin",
               "vacuous", "verdict", "master_seed")

    @property
    def margin(self) -> float:
        return self.rhs.mean - self.lhs.mean

    @property
    def verdict(self) -> str:
        if self.lhs.ci_low > self.rhs.ci_high:
            return FAIL
        if self.lhs.reps < MIN_CONCLUSIVE_REPS:
            return INCONCLUSIVE
        if self.lhs.ci_high <= self.rhs.ci_low:
            return PASS
        return INCONCLUSIVE

    def row(self) -> dict:
        return {
            "kind": self.kind,
            "p_or_x": self.p if self.kind == "lp" else self.x,
            "n": self.n,
            "lhs_mean": self.lhs.mean,
            "lhs_se": self.lhs.std_error,
            "rhs_mean": self.rhs.mean,
            "rhs_se": self.rhs.std_error,
            "margin": self.margin,
            "vacuous": self.vacuous,
            "verdict": self.verdict,
            "master_seed": self.master_seed,
        }


def _power_mean(values: np.ndarray, p: float, master_seed: int, name: str) -> MonteCarloEstimate:
    """``(E V^p)^{1/p}`` with a delta-method standard error."""
    v = np.asarray(values, dtype=float) ** p
    base = MonteCarloEstimate.from_samples(v, master_seed)
    if base.std_error == 0.0:
        value = base.mean ** (1.0 / p)
        return MonteCarloEstimate(value, 0.0, base.reps, value, value, master_seed, name)
    value = base.mean ** (1.0 / p)
    se = base.std_error * value / (p * base.mean)
    return MonteCarloEstimate.from_moments(value, se, base.reps, master_seed, name)


def dyadic_grid(n: int) -> list[int]:
    grid = [1]
    while grid[-1] * 2 < n:
        grid.append(grid[-1] * 2)
    if grid[-1] != n:
        grid.append(n)
    return grid


def check_lp(p: float, n: int, reps: int, master_seed: int, threads: int | None = None) -> InequalityReport:
    """``||max_i |S_i| ||_p <= ||max_i |X_i| ||_p + (4q+3) max_i ||S_i||_p``.

    For ``p = 2`` the last factor is ``sigma_n`` exactly. Otherwise
    ``||S_i||_p`` is estimated on the dyadic grid ``1, 2, 4, ..., n`` from the
    same paths and the largest entry is used; ``i -> ||S_i||_p`` is
    nondecreasing in practice, which the ``note`` field records.
    """
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    q = p / (p - 1.0)
    grid = dyadic_grid(n)
    batch = PathSampler(n, grid).batch(reps, master_seed, threads)
    lhs = _power_mean(batch.running_max[:, -1], p, master_seed, "max_abs_S_lp")
    note = ""
    if p == 2.0:
        s_norm = MonteCarloEstimate.exact(math.sqrt(exact_sigma2(n)))
    else:
        per_i = [_power_mean(np.abs(batch.sums[:, j]), p, master_seed, f"S_{i}_lp")
                 for j, i in enumerate(grid)]
        s_norm = max(per_i, key=lambda e: e.mean)
        note = "max over dyadic grid"
    factor = 4.0 * q + 3.0
    if s_norm.reps == 0:
        rhs = MonteCarloEstimate.exact(1.0 + factor * s_norm.mean, "rhs")
    else:
        rhs = MonteCarloEstimate.from_moments(1.0 + factor * s_norm.mean, factor * s_norm.std_error,
                                              s_norm.reps, master_seed, "rhs")
    return InequalityReport("lp", n, p, None, lhs, rhs, master_seed, note=note)


def check_tail(x: float, n: int, reps: int, master_seed: int, threads: int | None = None) -> InequalityReport:
    """``P(max_i |S_i| > x) <= (2/x)[18 E|S_n|1{|S_n| > x/12} + 55 max_i ||E_0 S_i||_1 + 1]``."""
    if x <= 0.0:
        raise ValueError("x must be positive")
    batch = PathSampler(n, [n]).batch(reps, master_seed, threads)
    exceed = (batch.running_max[:, 0] > x).astype(float)
    lhs = MonteCarloEstimate.from_samples(exceed, master_seed, "tail_prob")
    sn = np.abs(batch.sums[:, 0]).astype(float)
    trunc = MonteCarloEstimate.from_samples(sn * (sn > x / 12.0), master_seed)
    cond_l1 = exact_cond_norms(n).l1
    scale = 2.0 / x
    rhs_mean = scale * (18.0 * trunc.mean + 55.0 * cond_l1 + 1.0)
    rhs = MonteCarloEstimate.from_moments(rhs_mean, scale * 18.0 * trunc.std_error, reps, master_seed, "rhs")
    return InequalityReport("tail", n, None, x, lhs, rhs, master_seed, vacuous=rhs_mean >= 1.0)
