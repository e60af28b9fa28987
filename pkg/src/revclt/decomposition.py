"""Pathwise martingale decompositions of the partial sums.

For a horizon ``n`` let ``theta_n(x)`` be the averaged conditional partial sum
(see ``chain.theta``). Because ``theta_n`` is odd, every conditional
expectation needed is one application of the kernel, ``(Q g)(x) = (1-|x|) g(x)``:

* forward differences ``D_{k+1} = theta(xi_{k+1}) - (1-|xi_k|) theta(xi_k)``;
* backward differences ``Dt_k = theta(xi_k) - (1-|xi_{k+1}|) theta(xi_{k+1})``,
  using reversibility to turn conditioning on the future into ``Q`` at the
  later state.

With ``c(x) = cond_sum(x, n)`` the two representations are

    S_m = M_m + R_m,  R_m = tb(xi_0) - tb(xi_m) + (1/n) sum_{k<m} c(xi_k)
    S_k = ((X_k - X_0) + M_k + Mt_k + Rb_k) / 2,
    Rb_k = (1/n) sum_{i=1}^k [c(xi_{i-1}) + c(xi_i)]

where ``tb = theta - sign``. Both hold exactly; the residuals only measure
floating point error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .chain import cond_sum, theta
from .simulation import MonteCarloEstimate, Trajectory, simulate_direct_batch

RESIDUAL_RTOL = 1e-8


def theta_eval(n: int, x):
    return theta(x, n)


@dataclass
class DecompositionRecord:
    """Arrays indexed by time ``k = 0..m`` unless noted.

    ``D`` holds ``D_1..D_m`` and ``D_tilde`` holds ``Dt_0..Dt_{m-1}``.
    """

    n: int
    m: int
    states: np.ndarray
    theta: np.ndarray
    D: np.ndarray
    M: np.ndarray
    R: np.ndarray
    S: np.ndarray
    D_tilde: np.ndarray | None = None
    M_tilde: np.ndarray | None = None
    R_bar: np.ndarray | None = None
    residual_fwd: float = math.nan
    residual_fb: float = math.nan

    CSV_COLUMNS = ("k", "xi", "theta", "D", "M", "D_tilde", "M_tilde", "R", "R_bar", "S",
                   "residual_fwd", "residual_fb")

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.S))))

    def identities_hold(self, rtol: float = RESIDUAL_RTOL) -> bool:
        bound = rtol * self.scale
        fb_ok = self.R_bar is None or self.residual_fb <= bound
        return self.residual_fwd <= bound and fb_ok

    def rows(self) -> list[dict]:
        out = []
        for k in range(self.m + 1):
            out.append({
                "k": k,
                "xi": self.states[k],
                "theta": self.theta[k],
                "D": self.D[k - 1] if k >= 1 else None,
                "M": self.M[k],
                "D_tilde": self.D_tilde[k] if self.D_tilde is not None and k < self.m else None,
                "M_tilde": self.M_tilde[k] if self.M_tilde is not None else None,
                "R": self.R[k],
                "R_bar": self.R_bar[k] if self.R_bar is not None else None,
                "S": self.S[k],
                "residual_fwd": self.residual_fwd,
                "residual_fb": self.residual_fb,
            })
        return out


def _prefix(values: np.ndarray) -> np.ndarray:
    out = np.zeros(values.shape[:-1] + (values.shape[-1] + 1,))
    np.cumsum(values, axis=-1, out=out[..., 1:])
    return out


def _forward_arrays(states: np.ndarray, n: int):
    # works on a single path (1-D) or a batch of paths (rows)
    th = theta(states, n)
    keep = 1.0 - np.abs(states)
    D = th[..., 1:] - keep[..., :-1] * th[..., :-1]
    cs = cond_sum(states, n)
    tb = th - np.sign(states)
    R = tb[..., :1] - tb + _prefix(cs[..., :-1]) / n
    return th, D, _prefix(D), R, cs


def decompose_forward(traj: Trajectory, n: int) -> DecompositionRecord:
    if n < 1:
        raise ValueError("n must be >= 1")
    states = np.asarray(traj.states, dtype=float)
    th, D, M, R, _ = _forward_arrays(states, n)
    S = np.asarray(traj.prefix_sums, dtype=float)
    rec = DecompositionRecord(n=n, m=traj.n, states=states, theta=th, D=D, M=M, R=R, S=S)
    rec.residual_fwd = float(np.max(np.abs(S[1:] - M[1:] - R[1:])))
    return rec


def decompose_fb(traj: Trajectory, n: int) -> DecompositionRecord:
    rec = decompose_forward(traj, n)
    states = rec.states
    th = rec.theta
    cs = cond_sum(states, n)
    rec.D_tilde = th[:-1] - (1.0 - np.abs(states[1:])) * th[1:]
    rec.M_tilde = _prefix(rec.D_tilde)
    rec.R_bar = _prefix(cs[:-1] + cs[1:]) / n
    X = np.sign(states)
    rebuilt = 0.5 * ((X - X[0]) + rec.M + rec.M_tilde + rec.R_bar)
    rec.residual_fb = float(np.max(np.abs(rec.S[1:] - rebuilt[1:])))
    return rec


def pairwise_residuals(rec: DecompositionRecord) -> np.ndarray:
    """``X_k + X_{k+1} - D_{k+1} - Dt_k - (c(xi_k) + c(xi_{k+1}))/n`` for ``k < m``."""
    if rec.D_tilde is None:
        raise ValueError("record lacks the backward part; use decompose_fb")
    X = np.sign(rec.states)
    cs = cond_sum(rec.states, rec.n)
    return X[:-1] + X[1:] - rec.D - rec.D_tilde - (cs[:-1] + cs[1:]) / rec.n


# --- martingale checks -----------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(200)


def nu_integral(g) -> float:
    """``integral g d nu`` with ``nu(dx) = |x| dx``, by Gauss-Legendre on each half."""
    half = 0.5 * (_GL_NODES + 1.0)
    w = 0.5 * _GL_WEIGHTS
    return float(np.sum(w * half * g(half)) + np.sum(w * half * g(-half)))


def conditional_mean_of_difference(n: int, x) -> np.ndarray:
    """``E(D_{k+1} | xi_k = x)`` computed from the full kernel.

    Stay part ``(1-|x|) theta(x)`` plus jump part ``|x| * integral theta d nu``,
    minus the compensator ``(1-|x|) theta(x)``.
    """
    x = np.asarray(x, dtype=float)
    jump = nu_integral(lambda y: theta(y, n))
    stay = (1.0 - np.abs(x)) * theta(x, n)
    return stay + np.abs(x) * jump - (1.0 - np.abs(x)) * theta(x, n)


def exact_martingale_variance(n: int) -> float:
    """``Var(M_n) = n E D_1^2`` with ``E D_1^2 = int_0^1 theta(x)^2 (1 - (1-x)^2) dx``."""
    def integrand(x):
        return theta(x, n) ** 2 * (1.0 - (1.0 - x) ** 2)

    pts = sorted({min(0.5, c / n) for c in (0.5, 1.0, 2.0, 10.0)})
    val, _ = integrate.quad(integrand, 0.0, 1.0, points=pts, limit=500, epsabs=0.0, epsrel=1e-11)
    return n * val


@dataclass
class MartingaleCheck:
    n: int
    analytic_max_abs: float
    grid_size: int
    lag_corr: list[MonteCarloEstimate]
    var_ratio: MonteCarloEstimate | None
    var_ratio_exact: float | None


def difference_lag_products(n: int, reps: int, master_seed: int, lags=(1, 2, 3),
                            threads: int | None = None):
    """Per-path ``D_1^2`` and ``D_1 D_{1+j}`` from stationary starts."""
    states = simulate_direct_batch(max(lags) + 1, reps, master_seed, threads=threads)
    th = theta(states, n)
    D = th[:, 1:] - (1.0 - np.abs(states[:, :-1])) * th[:, :-1]
    return D[:, 0] ** 2, np.stack([D[:, 0] * D[:, j] for j in lags], axis=1)


def martingale_property_check(n: int, reps: int, master_seed: int, *, grid_size: int = 1000,
                              lags=(1, 2, 3), var_reps: int = 0, threads: int | None = None
                              ) -> MartingaleCheck:
    """Analytic and Monte Carlo evidence that ``D_k`` are martingale differences.

    ``lag_corr[j]`` estimates ``corr(D_1, D_{1+j})`` (target 0). With
    ``var_reps > 0`` also estimates ``Var(M_n)/sigma_n^2`` from paths of
    length ``n``.
    """
    from .analytics import exact_sigma2

    grid = np.linspace(-1.0, 1.0, grid_size)
    analytic = float(np.max(np.abs(conditional_mean_of_difference(n, grid))))
    sq, prods = difference_lag_products(n, reps, master_seed, lags, threads)
    scale = float(np.mean(sq))
    lag_corr = []
    for j, lag in enumerate(lags):
        est = MonteCarloEstimate.from_samples(prods[:, j] / scale, master_seed, f"corr_D1_D{1 + lag}")
        lag_corr.append(est)
    var_ratio = var_exact = None
    if var_reps:
        sigma2 = exact_sigma2(n)
        states = simulate_direct_batch(n, var_reps, master_seed + 1, threads=threads)
        _, D, _, _, _ = _forward_arrays(states, n)
        Mn = D.sum(axis=1)
        var_ratio = MonteCarloEstimate.from_samples(Mn ** 2 / sigma2, master_seed + 1, "var_M_over_sigma2")
        var_exact = exact_martingale_variance(n) / sigma2
    return MartingaleCheck(n, analytic, grid_size, lag_corr, var_ratio, var_exact)


def remainder_l1(n: int, reps: int, master_seed: int, threads: int | None = None) -> MonteCarloEstimate:
    """Monte Carlo ``||R_n^n||_1`` from stationary paths of length ``n``."""
    states = simulate_direct_batch(n, reps, master_seed, threads=threads)
    _, _, _, R, _ = _forward_arrays(states, n)
    return MonteCarloEstimate.from_samples(np.abs(R[:, -1]), master_seed, "R_l1")
