"""Deterministic, named random substreams derived from one root seed.

Python's builtin hash() is salted per process, so all derivation goes through
sha256. Substreams are addressed by string tags; the same (seed, tags) pair
yields the same generator on every platform and run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash64(*parts) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stable_hash64(*tags)])
