"""Exact finite-n quantities for the sign functional of the chain.

Everything here is deterministic and serves as the oracle for Monte Carlo
output: covariances ``E X_0 X_m = 1/(m+1)``, the variance of partial sums,
the L1/L2 norms of ``E_0(S_n)``, the regeneration-time law and the
normalizer ``b_n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

EULER_GAMMA = 0.5772156649015329
HARMONIC_DIRECT_MAX = 10**6
_CHUNK = 1 << 20


class CompensatedSum:
    """Neumaier-compensated running sum.

    ``add_array`` folds in a whole chunk via ``math.fsum`` (correctly rounded)
    so long series stay accurate without a Python-level loop per term.
    """

    def __init__(self) -> None:
        self.total = 0.0
        self.compensation = 0.0

    def add(self, value: float) -> None:
        t = self.total + value
        if abs(self.total) >= abs(value):
            self.compensation += (self.total - t) + value
        else:
            self.compensation += (value - t) + self.total
        self.total = t

    def add_array(self, values: np.ndarray) -> None:
        self.add(math.fsum(values))

    @property
    def value(self) -> float:
        return self.total + self.compensation


def _chunked_sum(term_fn, start: int, stop: int) -> float:
    # sum term_fn(j) over integer j in [start, stop)
    acc = CompensatedSum()
    for lo in range(start, stop, _CHUNK):
        j = np.arange(lo, min(stop, lo + _CHUNK), dtype=np.float64)
        acc.add_array(term_fn(j))
    return acc.value


def harmonic(n: int) -> float:
    """``H_n = sum_{j=1}^n 1/j`` (``H_0 = 0``)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n <= HARMONIC_DIRECT_MAX:
        return _chunked_sum(lambda j: 1.0 / j, 1, n + 1)
    # remainder after the n^-2 term is below 1/(120 n^4) < 1e-25 here
    return math.log(n) + EULER_GAMMA + 0.5 / n - 1.0 / (12.0 * n * n)


def exact_covariance(m: int) -> float:
    """``E(X_0 X_m) = integral of (1-|x|)^m against dx/2 = 1/(m+1)``."""
    if m < 0:
        raise ValueError("m must be non-negative")
    return 1.0 / (m + 1)


def exact_sigma2(n: int) -> float:
    """``E S_n^2 = n + 2 sum_{m=1}^{n-1} (n-m)/(m+1)`` by compensated summation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cross = _chunked_sum(lambda m: (n - m) / (m + 1.0), 1, n)
    return n + 2.0 * cross


class CondNorms(NamedTuple):
    l1: float
    l2_sq: float


def exact_cond_norms(n: int) -> CondNorms:
    """L1 norm and squared L2 norm of ``E_0(S_n)`` under stationarity.

    ``E_0(S_n) = sign(xi_0) sum_{j=1}^n (1-|xi_0|)^j``; integrating over the
    uniform law gives ``H_{n+1} - 1`` and ``sum_{j,k=1}^n 1/(j+k+1)``. The
    double sum is grouped by anti-diagonal ``s = j + k``, which carries
    ``min(s-1, 2n+1-s)`` terms.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    l1 = harmonic(n + 1) - 1.0
    l2_sq = _chunked_sum(lambda s: np.minimum(s - 1.0, 2.0 * n + 1.0 - s) / (s + 1.0), 2, 2 * n + 1)
    return CondNorms(l1, l2_sq)


@dataclass(frozen=True)
class RegenLaw:
    y: int
    tail: float
    pmf: float
    H: float


def regen_tail(y: int) -> float:
    """``P(tau_1 > y) = 2/((y+1)(y+2))`` for integer ``y >= 0``."""
    return 2.0 / ((y + 1.0) * (y + 2.0))


def regen_pmf(j: int) -> float:
    return 4.0 / (j * (j + 1.0) * (j + 2.0))


def regen_truncated_second_moment(y: int) -> float:
    """``H(y) = E(tau_1^2; tau_1 <= y)``.

    Summand ``4j/((j+1)(j+2)) = 8/(j+2) - 4/(j+1)`` telescopes into harmonic
    numbers: ``H(y) = 4 (H_{y+1} + 2/(y+2) - 2)``.
    """
    if y < 1:
        return 0.0
    return 4.0 * (harmonic(y + 1) + 2.0 / (y + 2.0) - 2.0)


def regen_exact(y: int) -> RegenLaw:
    if y < 1:
        raise ValueError("y must be >= 1")
    return RegenLaw(y=y, tail=regen_tail(y), pmf=regen_pmf(y), H=regen_truncated_second_moment(y))


class BnSolution(NamedTuple):
    b: float
    proxy: float


def solve_bn(n: int, tol: float = 1e-10) -> BnSolution:
    """Solve ``b^2 = n H(floor(b))`` by bisection on ``b`` in ``[1, n]``.

    ``H`` jumps at integers, so the located point is a sign change of
    ``b^2 - n H(floor(b))`` that may sit on a jump rather than a true root.
    ``proxy`` is the asymptotic value ``sqrt(2 n ln n)``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")

    cache: dict[int, float] = {}

    def gap(b: float) -> float:
        k = int(math.floor(b))
        if k not in cache:
            cache[k] = regen_truncated_second_moment(k)
        return b * b - n * cache[k]

    lo, hi = 1.0, float(n)
    assert gap(lo) < 0.0 < gap(hi), "no sign change in the bisection bracket"
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return BnSolution(b=0.5 * (lo + hi), proxy=math.sqrt(2.0 * n * math.log(n)))


@dataclass
class VarianceProfile:
    n_grid: list[int]
    sigma2: list[float] = field(default_factory=list)
    ratio: list[float] = field(default_factory=list)
    cond_l1: list[float] = field(default_factory=list)
    cond_l2_sq: list[float] = field(default_factory=list)
    cond_ratio: list[float] = field(default_factory=list)

    COLUMNS = ("n", "sigma2", "ratio_2nlogn", "cond_l1", "cond_l2_sq", "cond_ratio")

    def rows(self) -> list[dict]:
        return [
            dict(zip(self.COLUMNS, values))
            for values in zip(self.n_grid, self.sigma2, self.ratio, self.cond_l1,
                              self.cond_l2_sq, self.cond_ratio)
        ]

    @property
    def ratio_increasing(self) -> bool:
        finite = [r for r in self.ratio if math.isfinite(r)]
        return all(b > a for a, b in zip(finite, finite[1:]))

    @property
    def cond_ratio_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.cond_ratio, self.cond_ratio[1:]))


def variance_profile(n_grid: Sequence[int]) -> VarianceProfile:
    """Exact ``sigma_n^2`` and ``E_0(S_n)`` norms across a grid.

    ``ratio`` tending to 1 together with ``cond_ratio`` tending to 0 is the
    finite-n evidence that the variance is ``n`` times a slowly varying
    function and that ``||E_0(S_n)||_2 = o(sigma_n)``. ``ratio`` is NaN at
    ``n = 1`` where ``log n = 0``.
    """
    grid = [int(n) for n in n_grid]
    if not grid or any(n < 1 for n in grid):
        raise ValueError("grid must hold positive integers")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    profile = VarianceProfile(n_grid=grid)
    for n in grid:
        s2 = exact_sigma2(n)
        norms = exact_cond_norms(n)
        profile.sigma2.append(s2)
        profile.ratio.append(s2 / (2.0 * n * math.log(n)) if n > 1 else math.nan)
        profile.cond_l1.append(norms.l1)
        profile.cond_l2_sq.append(norms.l2_sq)
        profile.cond_ratio.append(norms.l2_sq / s2)
    return profile


def increment_covariance(a: int, b: int) -> float:
    """``E(S_a S_b)`` for ``0 <= a <= b``, from stationary increments."""
    if a > b:
        a, b = b, a
    if a == 0:
        return 0.0
    diff = exact_sigma2(b - a) if b > a else 0.0
    return 0.5 * (exact_sigma2(a) + exact_sigma2(b) - diff)
