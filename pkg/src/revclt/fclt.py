"""Distributional checks of the normalized partial-sum process.

``W_n(t) = S_[nt] / sigma_n`` with ``sigma_n^2 = E S_n^2`` exact. The limit
law of ``W_n(1)`` is N(0, 1/2) even though ``E W_n(1)^2 = 1`` for every
``n``; the missing half of the second moment escapes to the tails, which
``ui_diagnostic`` makes visible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .analytics import exact_sigma2, increment_covariance
from .simulation import (MonteCarloEstimate, PathSampler, conditional_square_moments,
                         grid_indices)

LIMIT_VARIANCE = 0.5
EPS_GRID = (0.05, 0.1)


@dataclass
class EmpiricalSample:
    values: np.ndarray
    n: int
    normalization: float
    master_seed: int | None = None

    def __post_init__(self) -> None:
        self.values = np.sort(np.asarray(self.values, dtype=float))

    @property
    def reps(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    reps: int
    variance: float

    @property
    def p_value_bound(self) -> float:
        """Conservative DKW bound ``2 exp(-2 reps stat^2)``, capped at 1."""
        return min(1.0, 2.0 * math.exp(-2.0 * self.reps * self.statistic ** 2))


def ks_stat(sample: EmpiricalSample | np.ndarray, variance: float) -> KsResult:
    """One-sample sup distance to the CDF of N(0, ``variance``)."""
    if variance <= 0.0:
        raise ValueError("variance must be positive")
    x = sample.values if isinstance(sample, EmpiricalSample) else np.sort(np.asarray(sample, dtype=float))
    m = x.size
    if m < 10:
        raise ValueError("need at least 10 values")
    cdf = ndtr(x / math.sqrt(variance))
    # empirical CDF jumps at ties; compare against both sides of each jump
    right = np.searchsorted(x, x, side="right") / m
    left = np.searchsorted(x, x, side="left") / m
    stat = float(max(np.max(right - cdf), np.max(cdf - left)))
    return KsResult(min(max(stat, 0.0), 1.0), m, float(variance))


def symmetry_distance(sample: EmpiricalSample | np.ndarray) -> float:
    """Two-sample KS distance between a sample and its negation."""
    x = sample.values if isinstance(sample, EmpiricalSample) else np.sort(np.asarray(sample, dtype=float))
    neg = np.sort(-x)
    pts = np.union1d(x, neg)
    f = np.searchsorted(x, pts, side="right") / x.size
    g = np.searchsorted(neg, pts, side="right") / x.size
    return float(np.max(np.abs(f - g)))


def dkw_two_sample_bound(reps: int, alpha: float = 1e-3) -> float:
    return math.sqrt(-math.log(alpha / 2.0) / 2.0) * math.sqrt(2.0 / reps)


# --- CLT ---------------------------------------------------------------------

@dataclass
class CltResult:
    n: int
    sample: EmpiricalSample
    ks: KsResult
    mean: MonteCarloEstimate
    second_moment: MonteCarloEstimate
    master_seed: int

    COLUMNS = ("n", "reps", "ks_stat", "p_value_bound", "mean", "mean_se", "second_moment",
               "second_moment_se", "symmetry_distance", "master_seed")

    def row(self) -> dict:
        return {
            "n": self.n,
            "reps": self.ks.reps,
            "ks_stat": self.ks.statistic,
            "p_value_bound": self.ks.p_value_bound,
            "mean": self.mean.mean,
            "mean_se": self.mean.std_error,
            "second_moment": self.second_moment.mean,
            "second_moment_se": self.second_moment.std_error,
            "symmetry_distance": symmetry_distance(self.sample),
            "master_seed": self.master_seed,
        }


def clt_sample(n: int, reps: int, master_seed: int, threads: int | None = None) -> EmpiricalSample:
    sigma = math.sqrt(exact_sigma2(n))
    sums = PathSampler(n, [n]).batch(reps, master_seed, threads).sums[:, 0]
    return EmpiricalSample(sums / sigma, n, sigma, master_seed)


def clt_test(n: int, reps: int, master_seed: int, threads: int | None = None) -> CltResult:
    if n < 10:
        raise ValueError("n must be >= 10")
    sample = clt_sample(n, reps, master_seed, threads)
    v = sample.values
    return CltResult(
        n=n,
        sample=sample,
        ks=ks_stat(sample, LIMIT_VARIANCE),
        mean=MonteCarloEstimate.from_samples(v, master_seed, "mean"),
        second_moment=MonteCarloEstimate.from_samples(v * v, master_seed, "second_moment"),
        master_seed=master_seed,
    )


# --- conditional CLT ---------------------------------------------------------

@dataclass(frozen=True)
class ProbeFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    limit: float


def default_test_functions() -> list[ProbeFunction]:
    """``cos(bu)`` and ``sin(bu)`` for ``b = 1, 2`` with their N(0, 1/2) means."""
    out = []
    for b in (1.0, 2.0):
        out.append(ProbeFunction(f"cos{b:g}", lambda u, b=b: np.cos(b * u), math.exp(-b * b / 4.0)))
        out.append(ProbeFunction(f"sin{b:g}", lambda u, b=b: np.sin(b * u), 0.0))
    return out


def default_start_grid(points: int = 22) -> np.ndarray:
    """Equispaced start states in [-1, 1]; an even count keeps 0 off the grid."""
    if points % 2:
        raise ValueError("use an even number of points so that 0 is excluded")
    return np.linspace(-1.0, 1.0, points)


@dataclass
class ConditionalCltReport:
    n: int
    inner_reps: int
    x_grid: np.ndarray
    functions: list[ProbeFunction]
    estimates: np.ndarray  # (len(x_grid), len(functions))
    std_errors: np.ndarray
    master_seed: int
    eps_grid: tuple = EPS_GRID

    COLUMNS = ("n", "x", "function", "estimate", "std_error", "limit", "deviation", "inner_reps",
               "master_seed")

    @property
    def deviations(self) -> np.ndarray:
        limits = np.array([f.limit for f in self.functions])
        return np.abs(self.estimates - limits)

    def fraction_exceeding(self, eps: float) -> float:
        """Share of (start, function) cells with deviation above ``eps``."""
        return float(np.mean(self.deviations > eps))

    def rows(self) -> list[dict]:
        dev = self.deviations
        out = []
        for i, x in enumerate(self.x_grid):
            for j, f in enumerate(self.functions):
                out.append({
                    "n": self.n, "x": float(x), "function": f.name,
                    "estimate": float(self.estimates[i, j]),
                    "std_error": float(self.std_errors[i, j]), "limit": f.limit,
                    "deviation": float(dev[i, j]), "inner_reps": self.inner_reps,
                    "master_seed": self.master_seed,
                })
        return out


def conditional_clt_test(x_grid: Sequence[float] | None, n: int, inner_reps: int,
                         master_seed: int, test_fns: Sequence[ProbeFunction] | None = None,
                         threads: int | None = None) -> ConditionalCltReport:
    """``E^x g(S_n / sigma_n)`` per start state ``x`` from ``inner_reps`` chains.

    Start ``x_grid[k]`` uses streams ``k * inner_reps`` onward, so the same
    seed gives matched randomness across ``n``.
    """
    grid = default_start_grid() if x_grid is None else np.asarray(x_grid, dtype=float)
    fns = list(test_fns) if test_fns is not None else default_test_functions()
    if inner_reps < 2:
        raise ValueError("inner_reps must be >= 2")
    sigma = math.sqrt(exact_sigma2(n))
    est = np.empty((grid.size, len(fns)))
    se = np.empty_like(est)
    for k, x in enumerate(grid):
        sums = PathSampler(n, [n], x0=float(x)).batch(inner_reps, master_seed, threads,
                                                      first=k * inner_reps).sums[:, 0]
        w = sums / sigma
        for j, f in enumerate(fns):
            vals = f.fn(w)
            est[k, j] = float(np.mean(vals))
            se[k, j] = float(np.std(vals, ddof=1)) / math.sqrt(inner_reps)
    return ConditionalCltReport(n, inner_reps, grid, fns, est, se, master_seed)


# --- finite-dimensional distributions ------------------------------------------

@dataclass
class FddReport:
    n: int
    t_grid: np.ndarray
    indices: np.ndarray
    products: list[list[MonteCarloEstimate]]
    exact_cov: np.ndarray
    increment_corr: list[MonteCarloEstimate]
    master_seed: int

    COLUMNS = ("n", "s", "t", "empirical", "std_error", "exact", "limit", "z_exact", "master_seed")
    INCREMENT_COLUMNS = ("n", "t_i", "t_next", "increment_corr", "std_error", "master_seed")

    @property
    def empirical_cov(self) -> np.ndarray:
        return np.array([[e.mean for e in row] for row in self.products])

    @property
    def limit_cov(self) -> np.ndarray:
        t = self.t_grid
        return LIMIT_VARIANCE * np.minimum.outer(t, t)

    @property
    def max_limit_deviation(self) -> float:
        return float(np.max(np.abs(self.empirical_cov - self.limit_cov)))

    def matches_exact(self, n_se: float = 4.0) -> bool:
        m = len(self.t_grid)
        return all(self.products[i][j].within(self.exact_cov[i, j], n_se)
                   for i in range(m) for j in range(i, m))

    def rows(self) -> list[dict]:
        out = []
        lim = self.limit_cov
        for i, s in enumerate(self.t_grid):
            for j in range(i, len(self.t_grid)):
                e = self.products[i][j]
                out.append({
                    "n": self.n, "s": float(s), "t": float(self.t_grid[j]), "empirical": e.mean,
                    "std_error": e.std_error, "exact": float(self.exact_cov[i, j]),
                    "limit": float(lim[i, j]), "z_exact": e.z_score(self.exact_cov[i, j]),
                    "master_seed": self.master_seed,
                })
        return out

    def increment_rows(self) -> list[dict]:
        return [{"n": self.n, "t_i": float(self.t_grid[i]), "t_next": float(self.t_grid[i + 1]),
                 "increment_corr": e.mean, "std_error": e.std_error, "master_seed": self.master_seed}
                for i, e in enumerate(self.increment_corr)]


def exact_fdd_covariance(n: int, t_grid: Sequence[float]) -> np.ndarray:
    """``E W_n(s) W_n(t)`` at finite ``n`` from the exact variances."""
    idx = grid_indices(n, t_grid)
    s2 = exact_sigma2(n)
    m = idx.size
    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            out[i, j] = out[j, i] = increment_covariance(int(idx[i]), int(idx[j])) / s2
    return out


def fdd_cov_test(t_grid: Sequence[float], n: int, reps: int, master_seed: int,
                 threads: int | None = None) -> FddReport:
    """Joint second moments of ``W_n`` on ``t_grid`` and increment correlations.

    The mean of ``W_n`` is exactly 0, so uncentered products estimate the
    covariance with plain replicate standard errors.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size < 2:
        raise ValueError("t_grid needs at least two points")
    idx = grid_indices(n, t)
    sigma = math.sqrt(exact_sigma2(n))
    W = PathSampler(n, idx).batch(reps, master_seed, threads).sums / sigma
    m = t.size
    products = [[MonteCarloEstimate.from_samples(W[:, i] * W[:, j], master_seed, f"W{i}W{j}")
                 for j in range(m)] for i in range(m)]
    inc_corr = []
    for i in range(m - 1):
        inc = W[:, i + 1] - W[:, i]
        scale = math.sqrt(float(np.mean(inc * inc)) * float(np.mean(W[:, i] ** 2))) or 1.0
        inc_corr.append(MonteCarloEstimate.from_samples(inc * W[:, i] / scale, master_seed,
                                                        f"inc_corr_{i}"))
    return FddReport(n, t, idx, products, exact_fdd_covariance(n, t), inc_corr, master_seed)


def scale_ratio(n: int, s: float) -> float:
    """``sigma^2_[ns] / sigma^2_n``, which tends to ``s``."""
    k = int(math.floor(n * s + 1e-9))
    return exact_sigma2(k) / exact_sigma2(n) if k >= 1 else 0.0


# --- tightness and uniform integrability --------------------------------------

@dataclass
class TightnessRow:
    delta: float
    k: int
    probability: MonteCarloEstimate

    @property
    def scaled(self) -> float:
        return self.probability.mean / self.delta

    @property
    def scaled_se(self) -> float:
        return self.probability.std_error / self.delta


TIGHTNESS_COLUMNS = ("n", "epsilon", "delta", "k", "probability", "probability_se", "scaled",
                     "scaled_se", "reps", "master_seed")


def tightness_modulus(delta_grid: Sequence[float], eps: float, n: int, reps: int,
                      master_seed: int, threads: int | None = None) -> list[TightnessRow]:
    """``(1/delta) P(max_{k <= [n delta]} |S_k| > eps sigma_n)`` per ``delta``.

    ``[n delta]`` is capped at ``n``; all deltas share one set of paths.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    deltas = np.asarray(delta_grid, dtype=float)
    if deltas.size == 0 or np.any(deltas <= 0.0):
        raise ValueError("deltas must be positive")
    ks = np.minimum(np.floor(n * deltas + 1e-9).astype(np.int64), n)
    order = np.argsort(ks, kind="stable")
    batch = PathSampler(n, ks[order]).batch(reps, master_seed, threads)
    level = eps * math.sqrt(exact_sigma2(n))
    rows = [None] * deltas.size
    for col, pos in enumerate(order):
        hits = (batch.running_max[:, col] > level).astype(float)
        est = MonteCarloEstimate.from_samples(hits, master_seed, f"delta={deltas[pos]:g}")
        rows[pos] = TightnessRow(float(deltas[pos]), int(ks[pos]), est)
    return rows


def tightness_rows(rows: list[TightnessRow], n: int, eps: float) -> list[dict]:
    return [{"n": n, "epsilon": eps, "delta": r.delta, "k": r.k, "probability": r.probability.mean,
             "probability_se": r.probability.std_error, "scaled": r.scaled, "scaled_se": r.scaled_se,
             "reps": r.probability.reps, "master_seed": r.probability.master_seed} for r in rows]


UI_COLUMNS = ("n", "M", "tail_mass", "std_error", "reps", "master_seed")


def ui_diagnostic(M_grid: Sequence[float], n_grid: Sequence[int], reps: int, master_seed: int,
                  threads: int | None = None) -> list[dict]:
    """``E[W_n(1)^2 ; |W_n(1)| > M]`` for each ``(n, M)``; the same seed serves every ``n``."""
    if any(M < 0 for M in M_grid):
        raise ValueError("M must be non-negative")
    rows = []
    for n in n_grid:
        w = clt_sample(int(n), reps, master_seed, threads).values
        for M in M_grid:
            est = MonteCarloEstimate.from_samples(w * w * (np.abs(w) > M), master_seed)
            rows.append({"n": int(n), "M": float(M), "tail_mass": est.mean, "std_error": est.std_error,
                         "reps": reps, "master_seed": master_seed})
    return rows


# --- conditional variance ----------------------------------------------------

@dataclass
class Key2Result:
    n: int
    outer_reps: int
    inner_reps: int
    raw: MonteCarloEstimate
    noise_bias: float
    noise_sd: float
    master_seed: int
    note: str = field(default="diagnostic grade: inner noise biases raw upward")

    COLUMNS = ("n", "outer_reps", "inner_reps", "raw_l1", "raw_se", "noise_bias", "noise_sd",
               "lower_l1", "master_seed", "note")

    @property
    def lower_l1(self) -> float:
        """``raw - noise_sd``: by the triangle inequality a downward-biased estimate."""
        return max(0.0, self.raw.mean - self.noise_sd)

    def row(self) -> dict:
        return {"n": self.n, "outer_reps": self.outer_reps, "inner_reps": self.inner_reps,
                "raw_l1": self.raw.mean, "raw_se": self.raw.std_error, "noise_bias": self.noise_bias,
                "noise_sd": self.noise_sd, "lower_l1": self.lower_l1, "master_seed": self.master_seed,
                "note": self.note}


def key2_estimate(n: int, outer_reps: int, inner_reps: int, master_seed: int,
                  threads: int | None = None) -> Key2Result:
    """``||E_0(S_n^2) - sigma_n^2||_1 / sigma_n^2`` by nested sampling.

    ``raw`` averages ``|m_i - sigma_n^2| / sigma_n^2`` over outer starts,
    where ``m_i`` is the inner mean of ``S_n^2``; inner noise inflates it.
    ``noise_bias`` is the mean inner variance of ``m_i`` (in units of
    ``sigma_n^4``) and halves when ``inner_reps`` doubles. ``noise_sd`` is the
    matching mean standard deviation (units of ``sigma_n^2``), which bounds
    the inflation of the L1 average, so ``lower_l1`` sits below the target.
    """
    if n > 10**4:
        raise ValueError("n must be <= 10^4 for the nested estimator")
    if outer_reps < 2 or inner_reps < 2:
        raise ValueError("outer_reps and inner_reps must be >= 2")
    s2 = exact_sigma2(n)
    _, mean_sq, var_sq = conditional_square_moments(n, outer_reps, inner_reps, master_seed, threads)
    raw = MonteCarloEstimate.from_samples(np.abs(mean_sq - s2) / s2, master_seed, "key2_raw")
    bias = float(np.mean(var_sq / inner_reps)) / (s2 * s2)
    sd = float(np.mean(np.sqrt(var_sq / inner_reps))) / s2
    return Key2Result(n, outer_reps, inner_reps, raw, bias, sd, master_seed)
