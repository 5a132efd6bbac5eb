"""Deterministic seed derivation and generator construction.

Every stochastic routine in the package draws from a ``numpy.random.Generator``
built here.  Replicate streams are derived from a base seed with a SplitMix64
finalizer so that replicate ``r`` of a run is reproducible in isolation and
independent of how many workers execute the batch.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix_seed(base_seed: int, replicate: int) -> int:
    """Derive a 64-bit stream seed for one replicate.

    Applies the SplitMix64 output finalizer to ``base_seed`` advanced by
    ``replicate + 1`` increments of the golden-ratio gamma.  The map is a
    bijection in each argument, so distinct replicates of the same base seed
    never collide.

    Parameters
    ----------
    base_seed : int
        Non-negative base seed for the whole batch.
    replicate : int
        Replicate index (0-based).

    Returns
    -------
    int
        Derived seed in ``[0, 2**64)``.
    """
    if base_seed < 0:
        raise ValueError("base_seed must be non-negative")
    if replicate < 0:
        raise ValueError("replicate must be non-negative")
    z = (base_seed + (replicate + 1) * _GOLDEN_GAMMA) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def generator(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def replicate_generator(base_seed: int, replicate: int) -> np.random.Generator:
    """Generator for one replicate of a seeded batch."""
    return generator(mix_seed(base_seed, replicate))
