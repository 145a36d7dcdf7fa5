"""Seeded, labelled random streams.

Every stochastic operation in this package draws from a stream derived
from (seed, label).  Labels keep streams independent: adding a new
consumer under a fresh label never shifts the draws of existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str = "") -> np.random.Generator:
    """Return a PCG64 generator for the given seed and stream label."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def as_generator(rng: int | np.random.Generator | None, label: str = "") -> np.random.Generator:
    """Coerce a seed (or None, or an existing generator) to a generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        rng = 0
    return stream(int(rng), label)


def subseed(seed: int, label: str) -> int:
    """A derived integer seed, stable in (seed, label)."""
    return int(stream(seed, label).integers(0, 2**62))
