import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numba import njit

from revclt.rng import RngStream, as_generator, next_double, next_uint64


@njit
def _draw_doubles(state, count):
    out = np.empty(count)
    for i in range(count):
        out[i] = next_double(state)
    return out


@njit
def _draw_ints(state, count):
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = next_uint64(state)
    return out


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), index=st.integers(0, 2**64 - 1))
def test_kernel_matches_numpy_philox(seed, index):
    s = RngStream(seed, index)
    ref = s.generator().random(37)
    assert np.array_equal(_draw_doubles(s.state(), 37), ref)


def test_kernel_raw_words_match_numpy():
    s = RngStream(7, 3)
    bitgen = np.random.Philox(key=np.array([7, 3], dtype=np.uint64))
    raw = bitgen.random_raw(21).astype(np.uint64)
    assert np.array_equal(_draw_ints(s.state(), 21), raw)


def test_streams_are_pure_functions_of_the_pair():
    a = RngStream(1, 2).generator().random(5)
    b = RngStream(1, 2).generator().random(5)
    c = RngStream(1, 3).generator().random(5)
    d = RngStream(2, 2).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_child_keeps_master_seed():
    assert RngStream(9, 0).child(4) == RngStream(9, 4)


@pytest.mark.parametrize("bad", [(-1, 0), (0, 2**64)])
def test_stream_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        RngStream(*bad)


def test_as_generator_rejects_other_types():
    g = np.random.default_rng(0)
    assert as_generator(g) is g
    with pytest.raises(TypeError):
        as_generator(42)
