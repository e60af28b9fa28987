import math

import numpy as np
import pytest
from scipy import stats

from revclt.analytics import exact_sigma2
from revclt.rng import RngStream
from revclt.simulation import (MonteCarloEstimate, PathSampler, ReplicateError, Trajectory,
                               TrajectoryFormatError, TrajectoryInvariantError, collect_replicates,
                               conditional_square_moments, grid_indices, load_trajectory,
                               regen_endpoint_samples, run_replicates, sample_regen_blocks, save_trajectory,
                               simulate_direct, simulate_direct_batch, simulate_regen_sum)


def test_simulate_direct_is_deterministic(stream):
    a = simulate_direct(500, stream)
    b = simulate_direct(500, stream)
    assert a == b
    a.validate()
    assert a.seed_spec == (12345, 0)


def test_simulate_direct_from_zero_stays_put(stream):
    t = simulate_direct(1, stream, x0=0.0)
    assert t.prefix_sums[-1] == 0
    assert np.all(t.states == 0.0)


def test_batch_rows_equal_single_paths():
    batch = simulate_direct_batch(50, 6, 99, first=3)
    for r in range(6):
        assert np.array_equal(batch[r], simulate_direct(50, RngStream(99, 3 + r)).states)


@pytest.mark.parametrize("method", ["regen", "direct"])
def test_path_sampler_batch_equals_streams(method):
    sampler = PathSampler(300, [10, 150, 300], method=method)
    batch = sampler.batch(20, 5, first=7)
    for r in range(20):
        one = sampler.sample(RngStream(5, 7 + r))
        assert np.array_equal(batch.sums[r], one.sums)
        assert np.array_equal(batch.running_max[r], one.running_max)


def test_direct_walk_matches_stored_path():
    traj = simulate_direct(200, RngStream(8, 2))
    got = PathSampler(200, [1, 50, 200], method="direct").sample(RngStream(8, 2))
    assert list(got.sums) == [traj.prefix_sums[k] for k in (1, 50, 200)]
    assert list(got.running_max) == [np.abs(traj.prefix_sums[1:k + 1]).max() for k in (1, 50, 200)]


def test_direct_path_moments_at_n100():
    reps = 10**5
    s = PathSampler(100, [100], method="direct").batch(reps, 2024).sums[:, 0].astype(float)
    mean = MonteCarloEstimate.from_samples(s)
    second = MonteCarloEstimate.from_samples(s * s)
    assert mean.within(0.0)
    assert second.within(exact_sigma2(100))


def test_regen_and_direct_samplers_agree():
    direct = PathSampler(100, [100], method="direct").batch(10**4, 11).sums[:, 0]
    regen = PathSampler(100, [100], method="regen").batch(10**4, 12).sums[:, 0]
    assert stats.ks_2samp(direct, regen).statistic < 0.05


def test_regen_sum_from_edge_start_jumps_every_step():
    # from |x| = 1 the first transition is forced; later holds follow the law
    s = np.array([simulate_regen_sum(1, [1.0], RngStream(3, i), x0=1.0)[0] for i in range(2000)])
    assert set(np.unique(s)) <= {-1, 1}
    assert abs(s.mean()) < 4 / math.sqrt(s.size)


def test_regen_sum_increments_are_bounded():
    for i in range(200):
        half, full = simulate_regen_sum(101, [0.5, 1.0], RngStream(4, i))
        assert abs(full - half) <= 101 - 50
        assert abs(half) <= 50


def test_grid_indices_validation():
    assert list(grid_indices(10, [0.25, 0.5, 1.0])) == [2, 5, 10]
    for bad in ([0.0, 1.0], [0.5, 1.5], [0.7, 0.2], []):
        with pytest.raises(ValueError):
            grid_indices(10, bad)


def test_regeneration_count_law_of_large_numbers():
    jumps = PathSampler(10**5, [10**5]).batch(1000, 77).jumps
    assert 0.49 <= float(np.mean(jumps / 10**5)) <= 0.51


def test_regen_blocks_laws():
    blocks = sample_regen_blocks(10**6, RngStream(6, 0))
    assert blocks.tau.min() >= 1
    for y in (1, 2, 5):
        p = 2 / ((y + 1) * (y + 2))
        assert abs((blocks.tau > y).mean() - p) < 4 * math.sqrt(p * (1 - p) / blocks.tau.size)
    assert abs(blocks.y.mean()) < 0.05


def test_endpoint_samples_are_reproducible():
    a = regen_endpoint_samples(100, 0.3, 50, RngStream(1, 1))
    b = regen_endpoint_samples(100, 0.3, 50, RngStream(1, 1))
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 100)


def test_conditional_square_moments_at_n1():
    x, mean, var = conditional_square_moments(1, 20, 10, 3)
    assert np.all(np.abs(x) <= 1)
    assert np.all(mean == 1.0) and np.all(var == 0.0)


def test_run_replicates_constant_task():
    est = run_replicates(lambda s: 1.0, 100, 0)
    assert est.mean == 1.0 and est.std_error == 0.0 and est.reps == 100


def test_run_replicates_symmetry_of_normalized_sum():
    sampler = PathSampler(10, [10])
    sigma = math.sqrt(exact_sigma2(10))
    est = run_replicates(lambda s: sampler(s)[0] / sigma, 10**5, 31)
    assert est.within(0.0)


def test_replicates_do_not_depend_on_thread_count():
    sampler = PathSampler(200, [200])
    one = collect_replicates(sampler, 400, 17, threads=1)
    eight = collect_replicates(sampler, 400, 17, threads=8)
    assert np.array_equal(one, eight)
    assert np.array_equal(one[:, 0], sampler.batch(400, 17, threads=1).sums[:, 0])
    assert np.array_equal(sampler.batch(400, 17, threads=1).sums, sampler.batch(400, 17, threads=4).sums)


def test_replicate_errors_name_the_index():
    def task(s):
        if s.stream_index == 5:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(ReplicateError) as info:
        collect_replicates(task, 10, 0)
    assert info.value.index == 5


def test_estimate_helpers():
    e = MonteCarloEstimate.from_samples([1.0, 2.0, 3.0, 4.0], 5, "x")
    assert e.mean == 2.5 and e.reps == 4
    assert e.ci_low < e.mean < e.ci_high
    assert e.row()["master_seed"] == 5
    exact = MonteCarloEstimate.exact(2.0)
    assert exact.within(2.0) and not exact.within(2.1)


# --- persistence -----------------------------------------------------------

def test_trajectory_round_trip(tmp_path, stream):
    traj = simulate_direct(300, stream)
    path = tmp_path / "t.csv"
    save_trajectory(traj, path)
    assert load_trajectory(path) == traj
    bare = Trajectory.from_states(traj.states)
    save_trajectory(bare, path)
    assert load_trajectory(path) == bare


def test_load_rejects_broken_prefix_sums(tmp_path, stream):
    traj = simulate_direct(5, stream)
    path = tmp_path / "t.csv"
    save_trajectory(traj, path)
    lines = path.read_text().splitlines()
    # row for i = 2 sits after the comment, header and row 0
    fields = lines[4].split(",")
    fields[3] = str(int(fields[3]) + 2)
    lines[4] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TrajectoryInvariantError):
        load_trajectory(path)


def test_load_empty_file_is_a_parse_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(TrajectoryFormatError):
        load_trajectory(path)


@pytest.mark.parametrize("body", [
    "i,xi,X\n",
    "i,xi,X,S\n0,0.5,,\n1,abc,1,1\n",
    "i,xi,X,S\n0,0.5,,\n2,0.5,1,1\n",
    "i,xi,X,S\n0,0.5,1,\n1,0.5,1,1\n",
    "i,xi,X,S\n0,0.5,,\n1,0.5,1.5,1\n",
    "i,xi,X,S\n0,0.5,,\n",
])
def test_load_reports_format_errors(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(TrajectoryFormatError):
        load_trajectory(path)


def test_regen_running_max_matches_direct_law():
    idx = [50, 200]
    direct = PathSampler(200, idx, method="direct").batch(10**4, 21).running_max
    regen = PathSampler(200, idx, method="regen").batch(10**4, 22).running_max
    for j in range(len(idx)):
        assert stats.ks_2samp(direct[:, j], regen[:, j]).statistic < 0.05
