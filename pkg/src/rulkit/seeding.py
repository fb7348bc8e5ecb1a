"""Deterministic seed derivation.

Every stochastic component takes an explicit integer seed. Sub-seeds are
derived by hashing the parent seed together with a structural tag, so the
randomness consumed by one component never depends on how much randomness
another component consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def derive_seed(base: int, *parts) -> int:
    """Derive a child seed from ``base`` and a sequence of hashable tags."""
    key = "/".join([str(int(base))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK


def rng_for(base: int, *parts) -> np.random.Generator:
    """A fresh generator seeded by :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(base, *parts))
