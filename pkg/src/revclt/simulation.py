"""Trajectory and partial-sum samplers, replicate orchestration, persistence.

Two samplers produce the same law for the prefix sums:

* ``simulate_direct`` steps the chain one transition at a time and keeps the
  full path.
* ``simulate_regen_sum`` walks holding blocks. A state ``x`` is held for a
  geometric number of steps with ``P(tau > m) = (1 - |x|)**m`` and then
  replaced by a fresh draw from ``nu``; within a block ``S`` moves linearly,
  so partial sums and running maxima at any index set cost O(#blocks).
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import numba
from numba import njit, prange

from .chain import nu_from_uniform, holding_time, nu_inverse_cdf
from .rng import RngStream, new_state, next_double

# Parallel kernels are launched from one orchestration thread only.
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "workqueue"

Z_99 = 2.5758293035489004
MAX_STORED_LENGTH = 10**7
_HOLD_CAP = 1 << 62


@njit(cache=True, nogil=True)
def _start(st, x0, use_x0):
    if use_x0:
        return x0
    return 2.0 * next_double(st) - 1.0


@njit(cache=True, nogil=True)
def _direct_states(st, x, out):
    out[0] = x
    for i in range(1, out.shape[0]):
        if next_double(st) < abs(x):
            x = nu_from_uniform(next_double(st))
        out[i] = x


@njit(cache=True, nogil=True)
def _direct_walk(st, x, n, idx, s_out, max_out):
    # direct stepping, recording S and the running max of |S| at idx
    s = 0
    runmax = 0
    j = 0
    m = idx.shape[0]
    while j < m and idx[j] == 0:
        s_out[j] = 0
        max_out[j] = 0
        j += 1
    for i in range(1, n + 1):
        if next_double(st) < abs(x):
            x = nu_from_uniform(next_double(st))
        if x > 0.0:
            s += 1
        elif x < 0.0:
            s -= 1
        if abs(s) > runmax:
            runmax = abs(s)
        while j < m and idx[j] == i:
            s_out[j] = s
            max_out[j] = runmax
            j += 1


@njit(cache=True, nogil=True)
def _regen_walk(st, x, n, idx, s_out, max_out):
    """Block walk up to time ``n``; fills ``S`` and ``max_{k<=i}|S_k|`` at ``idx``.

    ``idx`` must be sorted with entries in [0, n]. Returns the number of jumps
    (state changes) in times 1..n.
    """
    arrival = 0
    t = 0
    s = 0
    runmax = 0
    jumps = 0
    j = 0
    m = idx.shape[0]
    while j < m and idx[j] == 0:
        s_out[j] = 0
        max_out[j] = 0
        j += 1
    while t < n:
        tau = holding_time(abs(x), 1.0 - next_double(st), _HOLD_CAP)
        last = arrival + tau - 1
        if last > n:
            last = n
        if last > t:
            sg = 0
            if x > 0.0:
                sg = 1
            elif x < 0.0:
                sg = -1
            # S is monotone inside a block, so its |S| maximum sits at an end
            while j < m and idx[j] <= last:
                sk = s + sg * (idx[j] - t)
                mk = runmax
                if abs(sk) > mk:
                    mk = abs(sk)
                s_out[j] = sk
                max_out[j] = mk
                j += 1
            s += sg * (last - t)
            if abs(s) > runmax:
                runmax = abs(s)
            t = last
        arrival += tau
        if arrival > n:
            break
        x = nu_from_uniform(next_double(st))
        jumps += 1
    return jumps


@njit(cache=True, nogil=True, parallel=True)
def _walk_batch(master_seed, first, reps, x0, use_x0, n, idx, s_out, max_out, jumps, regen):
    for r in prange(reps):
        st = new_state(master_seed, np.uint64(first + r))
        x = _start(st, x0, use_x0)
        if regen:
            jumps[r] = _regen_walk(st, x, n, idx, s_out[r], max_out[r])
        else:
            _direct_walk(st, x, n, idx, s_out[r], max_out[r])


@njit(cache=True, nogil=True, parallel=True)
def _direct_states_batch(master_seed, first, x0, use_x0, out):
    for r in prange(out.shape[0]):
        st = new_state(master_seed, np.uint64(first + r))
        _direct_states(st, _start(st, x0, use_x0), out[r])


@njit(cache=True, nogil=True)
def _regen_endpoint_many(st, x0, n, count, out):
    # ``count`` chains from x0 sharing one stream; S_n only (nested estimators).
    idx = np.array([n], dtype=np.int64)
    s_buf = np.zeros(1, dtype=np.int64)
    m_buf = np.zeros(1, dtype=np.int64)
    for r in range(count):
        _regen_walk(st, x0, n, idx, s_buf, m_buf)
        out[r] = s_buf[0]


@njit(cache=True, nogil=True, parallel=True)
def _conditional_squares(master_seed, first, outer, inner, n, x_out, mean_out, var_out):
    idx = np.array([n], dtype=np.int64)
    for r in prange(outer):
        st = new_state(master_seed, np.uint64(first + r))
        x = 2.0 * next_double(st) - 1.0
        x_out[r] = x
        s_buf = np.zeros(1, dtype=np.int64)
        m_buf = np.zeros(1, dtype=np.int64)
        acc = 0.0
        acc2 = 0.0
        for _ in range(inner):
            _regen_walk(st, x, n, idx, s_buf, m_buf)
            sq = float(s_buf[0]) * float(s_buf[0])
            acc += sq
            acc2 += sq * sq
        mean = acc / inner
        mean_out[r] = mean
        var_out[r] = max(acc2 / inner - mean * mean, 0.0) * inner / max(inner - 1, 1)


def _check_start(x0) -> tuple[float, bool]:
    if x0 is None:
        return 0.0, False
    x0 = float(x0)
    if abs(x0) > 1.0:
        raise ValueError(f"start state {x0} outside [-1, 1]")
    return x0, True


@dataclass(eq=False)
class Trajectory:
    """A realized path ``xi_0..xi_n`` with ``X_i = sign(xi_i)`` and ``S_i``."""

    master_seed: int | None
    stream_index: int | None
    states: np.ndarray
    x_vals: np.ndarray
    prefix_sums: np.ndarray

    @property
    def n(self) -> int:
        return len(self.states) - 1

    @property
    def seed_spec(self) -> tuple[int | None, int | None]:
        return (self.master_seed, self.stream_index)

    @classmethod
    def from_states(cls, states, seed_spec=(None, None)) -> "Trajectory":
        states = np.asarray(states, dtype=float)
        if states.ndim != 1 or len(states) < 2:
            raise ValueError("a trajectory needs at least xi_0 and xi_1")
        x_vals = np.sign(states[1:]).astype(np.int64)
        prefix = np.concatenate(([0], np.cumsum(x_vals)))
        return cls(seed_spec[0], seed_spec[1], states, x_vals, prefix)

    def validate(self) -> None:
        if len(self.x_vals) != self.n or len(self.prefix_sums) != self.n + 1:
            raise TrajectoryInvariantError("array lengths disagree with n")
        if np.any(np.abs(self.states) > 1.0):
            raise TrajectoryInvariantError("state outside [-1, 1]")
        bad = np.flatnonzero(self.x_vals != np.sign(self.states[1:]))
        if bad.size:
            raise TrajectoryInvariantError(f"X_{bad[0] + 1} != sign(xi_{bad[0] + 1})")
        if self.prefix_sums[0] != 0:
            raise TrajectoryInvariantError("S_0 must be 0")
        bad = np.flatnonzero(np.diff(self.prefix_sums) != self.x_vals)
        if bad.size:
            raise TrajectoryInvariantError(f"S_{bad[0] + 1} != S_{bad[0]} + X_{bad[0] + 1}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.seed_spec == other.seed_spec
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.x_vals, other.x_vals)
                and np.array_equal(self.prefix_sums, other.prefix_sums))


def simulate_direct(n: int, seed: RngStream, x0: float | None = None) -> Trajectory:
    """Step the chain ``n`` times from ``xi_0 ~ uniform`` (or from ``x0``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x, use_x0 = _check_start(x0)
    st = seed.state()
    states = np.empty(n + 1)
    _direct_states(st, _start(st, x, use_x0), states)
    return Trajectory.from_states(states, (seed.master_seed, seed.stream_index))


def simulate_direct_batch(n: int, reps: int, master_seed: int, x0: float | None = None,
                          threads: int | None = None, first: int = 0) -> np.ndarray:
    """States of ``reps`` paths; row ``r`` equals ``simulate_direct(n, RngStream(master_seed, first + r)).states``."""
    if n < 1 or reps < 1:
        raise ValueError("n and reps must be >= 1")
    x, use_x0 = _check_start(x0)
    out = np.empty((reps, n + 1))
    with _numba_threads(threads):
        _direct_states_batch(np.uint64(master_seed), first, x, use_x0, out)
    return out


class _numba_threads:
    def __init__(self, threads: int | None):
        self.threads = min(resolve_threads(threads), numba.config.NUMBA_NUM_THREADS)

    def __enter__(self):
        self.previous = numba.get_num_threads()
        numba.set_num_threads(self.threads)

    def __exit__(self, *exc):
        numba.set_num_threads(self.previous)


@dataclass
class PathSample:
    """``S_k`` and ``max_{1<=i<=k} |S_i|`` at a set of indices ``k``.

    For batches the arrays gain a leading replicate axis.
    """

    indices: np.ndarray
    sums: np.ndarray
    running_max: np.ndarray
    jumps: np.ndarray | int


class PathSampler:
    """Partial sums and running maxima at fixed indices, one path per stream.

    ``method="regen"`` walks holding blocks (cost ~ number of blocks);
    ``method="direct"`` steps every transition. ``sample`` runs one stream;
    ``batch`` runs streams ``first..first+reps-1`` in a parallel compiled loop
    and returns exactly what ``reps`` calls to ``sample`` would.
    """

    def __init__(self, n: int, indices, x0: float | None = None, method: str = "regen"):
        if n < 1:
            raise ValueError("n must be >= 1")
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        if idx.ndim != 1 or np.any(np.diff(idx) < 0) or (idx.size and (idx[0] < 0 or idx[-1] > n)):
            raise ValueError("indices must be sorted and lie in [0, n]")
        if method not in ("regen", "direct"):
            raise ValueError(f"unknown method {method!r}")
        self.n = int(n)
        self.indices = idx
        self.x0, self._use_x0 = _check_start(x0)
        self.method = method

    def sample(self, seed: RngStream) -> PathSample:
        st = seed.state()
        x = _start(st, self.x0, self._use_x0)
        sums = np.empty(self.indices.size, dtype=np.int64)
        maxima = np.empty(self.indices.size, dtype=np.int64)
        if self.method == "regen":
            jumps = int(_regen_walk(st, x, self.n, self.indices, sums, maxima))
        else:
            _direct_walk(st, x, self.n, self.indices, sums, maxima)
            jumps = -1
        return PathSample(self.indices, sums, maxima, jumps)

    def __call__(self, seed: RngStream) -> np.ndarray:
        return self.sample(seed).sums

    def batch(self, reps: int, master_seed: int, threads: int | None = None, first: int = 0) -> PathSample:
        if reps < 1:
            raise ValueError("reps must be >= 1")
        m = self.indices.size
        sums = np.empty((reps, m), dtype=np.int64)
        maxima = np.empty((reps, m), dtype=np.int64)
        jumps = np.full(reps, -1, dtype=np.int64)
        with _numba_threads(threads):
            _walk_batch(np.uint64(master_seed), first, reps, self.x0, self._use_x0, self.n,
                        self.indices, sums, maxima, jumps, self.method == "regen")
        return PathSample(self.indices, sums, maxima, jumps)


def grid_indices(n: int, t_grid: Sequence[float]) -> np.ndarray:
    """``[n t]`` for each ``t`` in a sorted grid inside (0, 1]."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0.0) or np.any(t > 1.0):
        raise ValueError("t_grid must be non-empty and lie in (0, 1]")
    if np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be sorted")
    return np.floor(n * t + 1e-9).astype(np.int64)


def simulate_regen_sum(n: int, t_grid: Sequence[float], seed: RngStream,
                       x0: float | None = None) -> np.ndarray:
    """``S_[nt]`` for each ``t`` in ``t_grid`` without storing the path."""
    return PathSampler(n, grid_indices(n, t_grid), x0).sample(seed).sums


def regen_endpoint_samples(n: int, x0: float, count: int, seed: RngStream) -> np.ndarray:
    """``count`` draws of ``S_n`` for chains started at ``x0``, all from one stream."""
    x, _ = _check_start(x0)
    out = np.zeros(count, dtype=np.int64)
    _regen_endpoint_many(seed.state(), x, n, count, out)
    return out


def conditional_square_moments(n: int, outer: int, inner: int, master_seed: int,
                               threads: int | None = None):
    """Nested sampling of ``E(S_n^2 | xi_0)``.

    Outer replicate ``r`` draws ``xi_0`` uniformly from stream ``(master_seed, r)``
    and runs ``inner`` chains from it on the same stream. Returns the start
    states, the inner means of ``S_n^2`` and their inner sample variances.
    """
    if n < 1 or outer < 1 or inner < 1:
        raise ValueError("n, outer and inner must be >= 1")
    x = np.empty(outer)
    mean = np.empty(outer)
    var = np.empty(outer)
    with _numba_threads(threads):
        _conditional_squares(np.uint64(master_seed), 0, outer, inner, n, x, mean, var)
    return x, mean, var


@dataclass
class RegenBlocks:
    """I.i.d. regeneration cycles: holding length, atom from ``nu``, block sum."""

    tau: np.ndarray
    atom: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.tau * np.sign(self.atom)


def sample_regen_blocks(count: int, seed: RngStream) -> RegenBlocks:
    """``count`` i.i.d. cycles; ``tau = ceil(ln u / ln(1 - |atom|))``."""
    g = seed.generator()
    atom = nu_inverse_cdf(g.random(count))
    u = 1.0 - g.random(count)
    with np.errstate(divide="ignore"):
        raw = np.ceil(np.log(u) / np.log1p(-np.abs(atom)))
    raw = np.where(np.isfinite(raw), raw, float(_HOLD_CAP))
    tau = np.clip(raw, 1.0, float(_HOLD_CAP)).astype(np.int64)
    return RegenBlocks(tau=tau, atom=np.asarray(atom))


# --- Monte Carlo estimates and replicate orchestration -----------------------

@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    reps: int
    ci_low: float
    ci_high: float
    master_seed: int | None = None
    name: str = ""

    COLUMNS = ("name", "mean", "std_error", "reps", "ci_low", "ci_high", "master_seed")

    @classmethod
    def from_moments(cls, mean: float, std_error: float, reps: int,
                     master_seed: int | None = None, name: str = "") -> "MonteCarloEstimate":
        half = Z_99 * std_error
        return cls(float(mean), float(std_error), int(reps), float(mean - half),
                   float(mean + half), master_seed, name)

    @classmethod
    def from_samples(cls, samples, master_seed: int | None = None, name: str = "") -> "MonteCarloEstimate":
        x = np.asarray(samples, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("need a 1-D sample with at least two replicates")
        se = float(np.std(x, ddof=1)) / math.sqrt(x.size)
        return cls.from_moments(float(np.mean(x)), se, x.size, master_seed, name)

    @classmethod
    def exact(cls, value: float, name: str = "") -> "MonteCarloEstimate":
        return cls(float(value), 0.0, 0, float(value), float(value), None, name)

    def z_score(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.std_error

    def within(self, target: float, n_se: float = 4.0) -> bool:
        return abs(self.z_score(target)) <= n_se

    def row(self) -> dict:
        return {c: getattr(self, c) for c in self.COLUMNS}


class ReplicateError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"replicate {index} failed: {cause!r}")
        self.index = index
        self.cause = cause


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return min(8, os.cpu_count() or 1)
    return int(threads)


def collect_replicates(task: Callable[[RngStream], object], reps: int, master_seed: int,
                       threads: int | None = 1) -> np.ndarray:
    """Run ``task`` on streams ``(master_seed, 0..reps-1)``; row ``i`` is stream ``i``.

    The sample array depends only on ``(master_seed, reps)``, never on the
    worker count.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    workers = min(resolve_threads(threads), reps)

    def run_one(i: int):
        try:
            return np.asarray(task(RngStream(master_seed, i)), dtype=float)
        except Exception as exc:  # surfaced with the failing index
            raise ReplicateError(i, exc) from exc

    first = run_one(0)
    out = np.empty((reps,) + first.shape)
    out[0] = first

    def run_range(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            out[i] = run_one(i)

    if workers <= 1:
        run_range(1, reps)
    else:
        bounds = np.linspace(1, reps, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_range, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
            for f in futures:
                f.result()
    return out


def summarize(samples: np.ndarray, master_seed: int | None = None, names=None):
    """Default reducer: one estimate per column (pairwise-summed, order fixed)."""
    if samples.ndim == 1:
        return MonteCarloEstimate.from_samples(samples, master_seed, names or "")
    names = names or [str(j) for j in range(samples.shape[1])]
    return [MonteCarloEstimate.from_samples(samples[:, j], master_seed, names[j])
            for j in range(samples.shape[1])]


def run_replicates(task: Callable[[RngStream], object], reps: int, master_seed: int, *,
                   threads: int | None = 1, reducer=None):
    """Replicate ``task`` and reduce the sample array (default: mean/SE/CI)."""
    if reps < 2:
        raise ValueError("reps must be >= 2")
    samples = collect_replicates(task, reps, master_seed, threads)
    if reducer is None:
        return summarize(samples, master_seed)
    return reducer(samples)


# --- Trajectory persistence ----------------------------------------------------

class TrajectoryFormatError(ValueError):
    def __init__(self, line: int, column: str | int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class TrajectoryInvariantError(ValueError):
    pass


TRAJECTORY_HEADER = ["i", "xi", "X", "S"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_trajectory(traj: Trajectory, path) -> None:
    """Write ``i,xi,X,S`` rows; row 0 holds ``xi_0`` with empty ``X``/``S``.

    The seed spec, when known, goes on a leading ``#`` comment line.
    """
    if traj.n > MAX_STORED_LENGTH:
        raise ValueError(f"trajectories longer than {MAX_STORED_LENGTH} are not stored")
    path = Path(path)
    with path.open("w", newline="") as fh:
        if traj.master_seed is not None:
            fh.write(f"# master_seed={traj.master_seed},stream_index={traj.stream_index}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        w.writerow([0, _fmt(traj.states[0]), "", ""])
        for i in range(1, traj.n + 1):
            w.writerow([i, _fmt(traj.states[i]), int(traj.x_vals[i - 1]), int(traj.prefix_sums[i])])


def _parse_int(text: str, line: int, column: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise TrajectoryFormatError(line, column, f"not a number: {text!r}") from None
    if not value.is_integer():
        raise TrajectoryFormatError(line, column, f"expected an integer, got {text!r}")
    return int(value)


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    master_seed = stream_index = None
    offset = 0
    if lines and lines[0].startswith("#"):
        try:
            fields = dict(kv.split("=") for kv in lines[0][1:].strip().split(","))
            master_seed, stream_index = int(fields["master_seed"]), int(fields["stream_index"])
        except (ValueError, KeyError):
            raise TrajectoryFormatError(1, 1, "malformed seed comment") from None
        offset = 1
    rows = list(csv.reader(lines[offset:]))
    if not rows:
        raise TrajectoryFormatError(offset + 1, 1, "missing header")
    if rows[0] != TRAJECTORY_HEADER:
        raise TrajectoryFormatError(offset + 1, 1, f"expected header {','.join(TRAJECTORY_HEADER)}")
    body = rows[1:]
    if len(body) < 2:
        raise TrajectoryFormatError(offset + len(rows) + 1, 1, "need rows for xi_0 and at least xi_1")
    states = np.empty(len(body))
    x_vals = np.empty(len(body) - 1, dtype=np.int64)
    sums = np.zeros(len(body), dtype=np.int64)
    for k, row in enumerate(body):
        line = offset + 2 + k
        if len(row) != 4:
            raise TrajectoryFormatError(line, len(row) + 1, f"expected 4 fields, got {len(row)}")
        if _parse_int(row[0], line, "i") != k:
            raise TrajectoryFormatError(line, "i", f"expected index {k}")
        try:
            states[k] = float(row[1])
        except ValueError:
            raise TrajectoryFormatError(line, "xi", f"not a number: {row[1]!r}") from None
        if k == 0:
            if row[2] or row[3]:
                raise TrajectoryFormatError(line, "X", "row 0 must leave X and S empty")
            continue
        x_vals[k - 1] = _parse_int(row[2], line, "X")
        sums[k] = _parse_int(row[3], line, "S")
    traj = Trajectory(master_seed, stream_index, states, x_vals, sums)
    traj.validate()
    return traj
