"""Counter-based random streams (Philox4x64-10).

Every draw is a pure function of ``(seed, stream, path, index)``, so a Monte
Carlo estimate does not depend on path ordering, chunking or worker count.
``stream`` separates independent uses inside one path (switching, leg
endpoints, sub-step increments).  Both implementations produce the same bits
as ``numpy.random.Philox``.
"""
from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_KEY1 = 0x243F6A8885A308D3  # second key word; fixed domain separator

STREAM_SWITCH = 0
STREAM_LEG = 1
STREAM_STEP = 2

_TWO_M53 = 2.0 ** -53
_HALF_ULP = 2.0 ** -54


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return seed, _KEY1


# --- numba scalar kernels ------------------------------------------------------

@njit(inline="always")
def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    t = a_hi * b_lo + ((a_lo * b_lo) >> _S32)
    w1 = (t & _LO32) + a_lo * b_hi
    hi = a_hi * b_hi + (t >> _S32) + (w1 >> _S32)
    return hi, a * b


@njit
def philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit
def uniform_nb(k0, k1, stream, path, index):
    """Uniform in (0, 1) for draw ``index`` of ``path`` on ``stream``."""
    blk = np.uint64(index >> 2)
    r = philox_block(blk, np.uint64(path), np.uint64(stream), np.uint64(0), k0, k1)
    lane = index & 3
    if lane == 0:
        bits = r[0]
    elif lane == 1:
        bits = r[1]
    elif lane == 2:
        bits = r[2]
    else:
        bits = r[3]
    return float(bits >> _S11) * _TWO_M53 + _HALF_ULP


@njit
def normal_block(k0, k1, stream, path, index):
    """Philox block holding normal ``index`` (shared by normals ``2j`` and ``2j + 1``)."""
    return philox_block(np.uint64(index >> 1), np.uint64(path), np.uint64(stream), np.uint64(0), k0, k1)


@njit
def normal_from_block(r, index):
    if index & 1 == 0:
        b1, b2 = r[0], r[1]
    else:
        b1, b2 = r[2], r[3]
    u1 = float(b1 >> _S11) * _TWO_M53 + _HALF_ULP
    u2 = float(b2 >> _S11) * _TWO_M53 + _HALF_ULP
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit
def normal_nb(k0, k1, stream, path, index):
    # uniforms 2*index and 2*index + 1 always share one Philox block
    return normal_from_block(normal_block(k0, k1, stream, path, index), index)


@njit
def _uniforms_nb(k0, k1, stream, paths, index):
    out = np.empty(paths.size)
    for n in range(paths.size):
        out[n] = uniform_nb(k0, k1, stream, paths[n], index[n])
    return out


# --- numpy vector kernels ------------------------------------------------------

def _mulhilo_np(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    t = a_hi * b_lo + ((a_lo * b_lo) >> _S32)
    w1 = (t & _LO32) + a_lo * b_hi
    hi = a_hi * b_hi + (t >> _S32) + (w1 >> _S32)
    return hi, a * b


def philox_np(counters: np.ndarray, key) -> np.ndarray:
    """Philox4x64-10 on an ``(n, 4)`` uint64 counter array."""
    c = np.asarray(counters, dtype=np.uint64)
    c0, c1, c2, c3 = (c[:, j].copy() for j in range(4))
    k0, k1 = np.uint64(key[0]), np.uint64(key[1])
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo_np(_M0, c0)
            hi1, lo1 = _mulhilo_np(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=1)


def _uniforms_np(k0, k1, stream, paths, index):
    paths = np.asarray(paths, dtype=np.uint64)
    index = np.asarray(index, dtype=np.int64)
    ctr = np.zeros((paths.size, 4), dtype=np.uint64)
    ctr[:, 0] = (index >> 2).astype(np.uint64)
    ctr[:, 1] = paths
    ctr[:, 2] = np.uint64(stream)
    bits = philox_np(ctr, (k0, k1))[np.arange(paths.size), index & 3]
    return (bits >> _S11).astype(np.float64) * _TWO_M53 + _HALF_ULP


# --- public API ----------------------------------------------------------------

def uniforms(seed: int, stream: int, paths, index) -> np.ndarray:
    """Uniforms in (0, 1) for each ``(path, index)`` pair (arrays broadcast)."""
    k0, k1 = seed_key(seed)
    paths, index = np.broadcast_arrays(np.asarray(paths, dtype=np.int64), np.asarray(index, dtype=np.int64))
    shape = paths.shape
    paths = paths.ravel()
    index = index.ravel()
    if _accel.use_numba():
        out = _uniforms_nb(np.uint64(k0), np.uint64(k1), np.int64(stream), paths.astype(np.int64),
                           index.astype(np.int64))
    else:
        out = _uniforms_np(k0, k1, stream, paths, index)
    return out.reshape(shape)


def normals(seed: int, stream: int, paths, index) -> np.ndarray:
    """Standard normals by Box-Muller on uniforms ``2*index`` and ``2*index + 1``."""
    index = np.asarray(index, dtype=np.int64)
    u1 = uniforms(seed, stream, paths, 2 * index)
    u2 = uniforms(seed, stream, paths, 2 * index + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class PathStream:
    """Draw source for one path: consecutive uniforms on a given stream."""

    def __init__(self, seed: int, path: int):
        self.seed = int(seed)
        self.path = int(path)
        self._next = {}

    def uniform(self, stream: int = STREAM_SWITCH) -> float:
        k = self._next.get(stream, 0)
        self._next[stream] = k + 1
        return float(uniforms(self.seed, stream, self.path, k))

    def at(self, stream: int, index: int) -> float:
        return float(uniforms(self.seed, stream, self.path, index))


def as_seed(rng) -> int:
    """Accept an int seed or a ``numpy.random.Generator`` and return a 64-bit seed."""
    if rng is None:
        raise ValueError("a seed is required for Monte Carlo work")
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63))
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    raise TypeError(f"expected an int seed or numpy Generator, got {type(rng).__name__}")
