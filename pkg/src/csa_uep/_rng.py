"""Counter-based random streams shared by the numba kernels.

Every frame draws from its own SplitMix64 stream keyed on ``(seed, frame_index)``,
so Monte Carlo results do not depend on how frames are split across workers.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def frame_key(seed, index):
    return mix64(mix64(seed) + (np.uint64(index) + _ONE) * GOLDEN)


@njit(cache=True, nogil=True)
def next_uniform(state):
    """Advance ``state[0]`` and return a double in [0, 1)."""
    state[0] += GOLDEN
    return np.float64(mix64(state[0]) >> _S11) * _INV53


@njit(cache=True, nogil=True)
def next_below(state, k):
    """Uniform integer in ``0..k-1``."""
    j = np.int64(next_uniform(state) * k)
    return j if j < k else k - 1


def stream_key(seed: int, index: int) -> int:
    return int(frame_key(np.uint64(seed), np.int64(index)))
