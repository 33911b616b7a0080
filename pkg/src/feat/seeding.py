"""Deterministic per-tensor random streams.

Each named tensor draws from its own generator keyed by (seed, name hash),
so adding or removing tensors never shifts the values of the others and
fixtures stay stable across refactors.
"""

import hashlib

import numpy as np


def tensor_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))
