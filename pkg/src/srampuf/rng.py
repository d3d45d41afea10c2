"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, index, counter)``, so a
cell's random numbers never depend on evaluation order or on how cells are
split between workers.  The mixing function is the SplitMix64 finaliser,
applied as a keyed hash over the four integers.  The scalar functions are
numba-compiled so the simulation kernels can draw noise inline.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

STREAM_MISMATCH = 1
STREAM_STARTUP_NOISE = 2
STREAM_RESPONSES = 3
STREAM_SYNTHETIC = 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, nogil=True)
def hash4(seed, stream, index, counter):
    """64-bit hash of four non-negative integers."""
    h = _mix(np.uint64(seed) + _GOLDEN)
    h = _mix(h ^ (np.uint64(stream) * _GOLDEN))
    h = _mix(h ^ (np.uint64(index) + _GOLDEN))
    h = _mix(h ^ (np.uint64(counter) * _M1 + _GOLDEN))
    return h


@nb.njit(cache=True, nogil=True)
def uniform(seed, stream, index, counter):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(hash4(seed, stream, index, counter) >> _S11) * _INV_2_53


@nb.njit(cache=True, nogil=True)
def normal_pair(seed, stream, index, counter):
    """Two independent standard normals (Box-Muller) for one counter value.

    Counter ``c`` consumes the uniforms at counters ``2c`` and ``2c + 1``.
    """
    u1 = 1.0 - uniform(seed, stream, index, 2 * counter)
    u2 = uniform(seed, stream, index, 2 * counter + 1)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(_TWO_PI * u2), r * math.sin(_TWO_PI * u2)


@nb.njit(cache=True, nogil=True)
def _normal_block(seed, stream, indices, n_per_index, out):
    for row in range(indices.shape[0]):
        idx = indices[row]
        for j in range(0, n_per_index, 2):
            z0, z1 = normal_pair(seed, stream, idx, j // 2)
            out[row, j] = z0
            if j + 1 < n_per_index:
                out[row, j + 1] = z1


@nb.njit(cache=True, nogil=True)
def _uniform_block(seed, stream, indices, n_per_index, out):
    for row in range(indices.shape[0]):
        idx = indices[row]
        for j in range(n_per_index):
            out[row, j] = uniform(seed, stream, idx, j)


def normals(seed: int, stream: int, indices, n_per_index: int) -> np.ndarray:
    """Standard normals, shape ``(len(indices), n_per_index)``.

    Row ``i`` depends only on ``(seed, stream, indices[i])``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    out = np.empty((idx.shape[0], n_per_index))
    _normal_block(_check_seed(seed), stream, idx, n_per_index, out)
    return out


def uniforms(seed: int, stream: int, indices, n_per_index: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.empty((idx.shape[0], n_per_index))
    _uniform_block(_check_seed(seed), stream, idx, n_per_index, out)
    return out


def _check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2**63:
        raise ValueError(f"seed must be in [0, 2**63), got {seed}")
    return seed
