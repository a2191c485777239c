"""Stateless counter-based uniform hash.

Every random quantity in this package is a pure function of (seed, index),
so any index can be drawn in O(1), ranges can be generated in parallel, and
regeneration is bit-exact without storing a stream.  The mixer is the
splitmix64 finalizer applied to ``seed + index * GAMMA``; its output passes
the usual statistical batteries and distinct 64-bit seeds yield streams
whose index ranges cannot overlap below index ~2^63.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U_GAMMA = np.uint64(GAMMA)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 2.0 ** -53

# Salt separating derived-seed streams from value streams.
_CHILD_SALT = 0x5851F42D4C957F2D


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def uniform01(seed: int, index: int) -> float:
    """Uniform draw in [0, 1) for a single (seed, index) pair.

    Equals ``uniform01_block(seed, index, index)[0]`` bit for bit.
    """
    z = mix64((seed + index * GAMMA) & MASK64)
    return (z >> 11) * _INV53


def uniform01_block(seed: int, lo: int, hi: int) -> np.ndarray:
    """Vectorized uniforms for indices lo..hi inclusive (float64 in [0,1))."""
    idx = np.arange(lo, hi + 1, dtype=np.uint64)
    return _mix_block(seed, idx).astype(np.float64) * _INV53


def _mix_block(seed: int, idx: np.ndarray) -> np.ndarray:
    """53-bit hash outputs for a uint64 index array (in-place friendly)."""
    z = np.uint64(seed & MASK64) + idx * _U_GAMMA
    z ^= z >> _S30
    z *= _U_M1
    z ^= z >> _S27
    z *= _U_M2
    z ^= z >> _S31
    return z >> _S11


def child_seed(seed: int, index: int) -> int:
    """Derive the index-th child seed; children of one seed never collide
    with the parent's own value stream (distinct salt)."""
    return mix64((seed ^ _CHILD_SALT) + index * GAMMA)
