"""Seeded random streams.

Every experiment carries one 64-bit seed. Independent substreams are derived
from ``(seed, *keys)`` through :class:`numpy.random.SeedSequence` spawn keys and
feed a counter-based Philox generator, so replicate ``i`` draws the same numbers
no matter which worker runs it or in what order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("substream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the substream named by ``keys`` under ``seed``."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return substream(int(rng))
