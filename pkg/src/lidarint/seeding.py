"""Deterministic seed derivation for independent random streams."""

from __future__ import annotations

import zlib

import numpy as np


def _entropy(parts):
    out = []
    for part in parts:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        else:
            out.append(int(part))
    return tuple(out)


def derived_rng(*parts) -> np.random.Generator:
    """Generator seeded from a tuple of ints/strings (same parts, same stream)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_entropy(parts))))


def derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(_entropy(parts)).generate_state(1)[0])
