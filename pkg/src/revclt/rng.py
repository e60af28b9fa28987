"""Reproducible random streams keyed by ``(master_seed, stream_index)``.

A stream is Philox4x64-10 with the pair as its 128-bit key and the counter
starting at zero, i.e. exactly ``numpy.random.Philox(key=[master_seed,
stream_index])``. The compiled kernels below reproduce that generator bit for
bit so that samplers can run many streams inside one parallel loop while
``RngStream.generator()`` still gives the same numbers from numpy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic

_UINT64_MAX = (1 << 64) - 1

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_TWO_M53 = 1.0 / 9007199254740992.0

# state layout: key0, key1, ctr0..ctr3, buf0..buf3, buffer position
STATE_SIZE = 11


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_index: int

    def __post_init__(self) -> None:
        for name in ("master_seed", "stream_index"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _UINT64_MAX:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")

    def generator(self) -> np.random.Generator:
        """Fresh numpy generator positioned at the start of this stream."""
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def state(self) -> np.ndarray:
        """Kernel-side state for this stream (see ``next_double``)."""
        return new_state(np.uint64(self.master_seed), np.uint64(self.stream_index))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, index)


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@intrinsic
def _mulhi64(typingctx, a, b):
    """High word of the full 128-bit product of two uint64."""
    sig = types.uint64(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i128 = ir.IntType(128)
        prod = builder.mul(builder.zext(args[0], i128), builder.zext(args[1], i128))
        return builder.trunc(builder.lshr(prod, ir.Constant(i128, 64)), ir.IntType(64))

    return sig, codegen


@njit(cache=True, nogil=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 block function."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0 = _mulhi64(_M0, c0)
        lo0 = _M0 * c0
        hi1 = _mulhi64(_M1, c2)
        lo1 = _M1 * c2
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(cache=True, nogil=True)
def new_state(master_seed, stream_index):
    st = np.zeros(STATE_SIZE, dtype=np.uint64)
    st[0] = master_seed
    st[1] = stream_index
    st[10] = np.uint64(4)
    return st


@njit(cache=True, nogil=True, inline="always")
def next_uint64(st):
    pos = st[10]
    if pos < np.uint64(4):
        st[10] = pos + _ONE
        return st[6 + np.int64(pos)]
    st[2] = st[2] + _ONE
    if st[2] == _ZERO:
        st[3] = st[3] + _ONE
        if st[3] == _ZERO:
            st[4] = st[4] + _ONE
            if st[4] == _ZERO:
                st[5] = st[5] + _ONE
    b0, b1, b2, b3 = philox4x64(st[2], st[3], st[4], st[5], st[0], st[1])
    st[6] = b0
    st[7] = b1
    st[8] = b2
    st[9] = b3
    st[10] = _ONE
    return b0


@njit(cache=True, nogil=True, inline="always")
def next_double(st):
    """Uniform on [0, 1); same value as ``Generator.random()`` on the stream."""
    return np.float64(next_uint64(st) >> _S11) * _TWO_M53
