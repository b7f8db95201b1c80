"""Platform-independent 64-bit hashing on numpy uint64 arrays.

``splitmix64`` is the finalizer of Steele et al.'s SplitMix64 generator.
Salts come from BLAKE2b so they do not depend on Python's randomized ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np

HASH_ALGORITHM = "splitmix64(splitmix64(lo ^ salt) ^ hi), salt=blake2b-64(name)"

_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xBF58476D1CE4E5B9)
_C3 = np.uint64(0x94D049BB133111EB)


def salt(name: str) -> np.uint64:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return np.uint64(int.from_bytes(digest, "little"))


def splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _C1
        z = (z ^ (z >> np.uint64(30))) * _C2
        z = (z ^ (z >> np.uint64(27))) * _C3
        return z ^ (z >> np.uint64(31))


def uniform01(x: np.ndarray) -> np.ndarray:
    """Map hashed uint64 values to floats in [0, 1) using the top 53 bits."""
    return (splitmix64(x) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
