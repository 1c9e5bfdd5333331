"""Seeded random streams.

All randomness goes through :func:`make_rng`, which builds a numpy
``Generator`` on the PCG64 bit generator.  The state is derived with
``numpy.random.SeedSequence`` from the root seed plus a tuple of integer
or string keys, so every consumer (model init, fold training, mixup,
oversampling, ...) owns an independent stream and identical
``(seed, keys)`` always reproduce the same draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return key


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed from ``rng`` for a sub-consumer."""
    return int(rng.integers(0, 2**63 - 1))
