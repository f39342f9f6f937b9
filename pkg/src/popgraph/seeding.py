"""Seed derivation: every random stream comes from (global seed, purpose tags)."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *tags) -> int:
    h = hashlib.sha256(repr((int(seed),) + tuple(str(t) for t in tags)).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))
