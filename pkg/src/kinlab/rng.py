"""Scheduler-independent random substreams.

Substream ``i`` of master seed ``s`` is seeded with ``splitmix64(s ^ splitmix64(i + GOLDEN))``
where ``splitmix64`` is the standard finalizer

    z += 0x9E3779B97F4A7C15
    z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z ^= z >> 31

(all arithmetic mod 2^64).  The derived 64-bit value seeds numpy's PCG64.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(z: int) -> int:
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """64-bit seed of substream ``index``."""
    return splitmix64((int(master) & MASK64) ^ splitmix64((int(index) + GOLDEN) & MASK64))


def substream(master: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, index)))
