"""The Metropolis-type chain on [-1, 1] and its closed-form operators.

From state ``x`` the chain stays put with probability ``1 - |x|`` and
otherwise jumps to a fresh draw from ``nu(dx) = |x| dx``. The uniform law on
[-1, 1] is invariant and the chain is reversible. For any odd ``g`` the
one-step operator is ``(Qg)(x) = (1 - |x|) g(x)``, which makes every
conditional expectation of an odd functional a geometric sum in
``r = 1 - |x|``.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from numba import njit

from .rng import RngLike, as_generator

# Below this |x| (more precisely, whenever n|x| <= SERIES_SWITCH) the
# geometric closed forms cancel catastrophically and a binomial series is used.
EPS_GEO = 1e-8
SERIES_SWITCH = 1.0
_SERIES_TERMS = 32


def sign(x):
    """Shipped odd functional; ``sign(0) == 0``."""
    return np.sign(x)


def nu_inverse_cdf(u):
    """Inverse CDF of the density ``|x|`` on [-1, 1], for ``u`` in [0, 1)."""
    u = np.asarray(u, dtype=float)
    out = np.where(u < 0.5, -np.sqrt(np.clip(1.0 - 2.0 * u, 0.0, None)),
                   np.sqrt(np.clip(2.0 * u - 1.0, 0.0, None)))
    return out if out.ndim else float(out)


def sample_nu(rng: RngLike, size=None):
    g = as_generator(rng)
    return nu_inverse_cdf(g.random(size))


def sample_stationary(rng: RngLike, size=None):
    """Draw from the invariant law, uniform on [-1, 1]."""
    g = as_generator(rng)
    u = g.random(size)
    return 2.0 * u - 1.0


def step(x: float, rng: RngLike) -> float:
    if abs(x) > 1.0:
        raise ValueError(f"state {x} outside [-1, 1]")
    g = as_generator(rng)
    if g.random() < abs(x):
        return float(nu_inverse_cdf(g.random()))
    return float(x)


def q_power_f(x, k: int):
    """``E(sign(xi_k) | xi_0 = x) = (1 - |x|)**k * sign(x)``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    x = np.asarray(x, dtype=float)
    out = (1.0 - np.abs(x)) ** k * np.sign(x)
    return out if out.ndim else float(out)


def apply_q_odd(g: Callable, x):
    """Apply the one-step kernel to an odd function ``g``.

    The jump part integrates ``g`` against the symmetric ``nu`` and vanishes.
    """
    x = np.asarray(x, dtype=float)
    out = (1.0 - np.abs(x)) * np.asarray(g(x), dtype=float)
    return out if out.ndim else float(out)


def _binomial_series(a: np.ndarray, n: int, shift: int) -> np.ndarray:
    # sum_k (-a)^k C(n+1, k+shift); valid and fast for n*a <= SERIES_SWITCH.
    term = np.full_like(a, float(math.comb(n + 1, shift)))
    total = term.copy()
    for k in range(min(n + 1 - shift, _SERIES_TERMS)):
        term = term * (-a) * (n - k - shift + 1) / (k + shift + 1)
        total += term
    return total


def _split(x, n: int):
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    small = n * a <= SERIES_SWITCH
    return x, a, small


def geometric_sum(x, n: int):
    """Unsigned ``sum_{j=1}^n (1 - |x|)**j``."""
    x, a, small = _split(x, n)
    out = np.empty_like(a)
    big = ~small
    if big.any():
        ab = a[big]
        with np.errstate(divide="ignore"):
            tail = -np.expm1(n * np.log1p(-ab))
        out[big] = (1.0 - ab) * tail / ab
    if small.any():
        # sum_{j=1}^n r^j = sum_{j=0}^n r^j - 1 and sum_{j=0}^n r^j = sum_k (-a)^k C(n+1, k+1)
        out[small] = _binomial_series(a[small], n, 1) - 1.0
    return out


def cond_sum(x, n: int):
    """``E(S_{k+n} - S_k | xi_k = x) = sign(x) * sum_{j=1}^n (1 - |x|)**j``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = np.sign(np.asarray(x, dtype=float)) * geometric_sum(x, n)
    return out if out.ndim else float(out)


def theta(x, n: int):
    """Averaged conditional partial sums of the shipped functional.

    ``theta_n(x) = (1/n) sum_{i=0}^{n-1} sum_{j=0}^{i} (1-|x|)^j sign(x)``,
    in closed form ``sign(x) * (1/|x| - r(1 - r^n) / (n x^2))``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x, a, small = _split(x, n)
    out = np.empty_like(a)
    big = ~small
    if big.any():
        ab = a[big]
        with np.errstate(divide="ignore"):
            tail = -np.expm1(n * np.log1p(-ab))
        out[big] = (n * ab - (1.0 - ab) * tail) / (n * ab * ab)
    if small.any():
        out[small] = _binomial_series(a[small], n, 2) / n
    out = np.sign(x) * out
    return out if out.ndim else float(out)


# Scalar kernels shared by the compiled samplers.

@njit(cache=True, nogil=True)
def nu_from_uniform(u):
    if u < 0.5:
        return -math.sqrt(1.0 - 2.0 * u)
    return math.sqrt(2.0 * u - 1.0)


@njit(cache=True, nogil=True)
def holding_time(a, u, cap):
    """Holding length with ``P(tau > m) = (1 - a)**m``, capped at ``cap``.

    ``u`` must lie in (0, 1]; ``a == 0`` holds forever (returns ``cap``).
    """
    if a >= 1.0:
        return 1
    if a <= 0.0:
        return cap
    t = math.ceil(math.log(u) / math.log1p(-a))
    if t < 1.0:
        return 1
    if t >= cap:
        return cap
    return int(t)
