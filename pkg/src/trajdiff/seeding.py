"""Hierarchical seed derivation.

Every random choice in the package flows from a single root seed. Sub-pipelines
(scene generation, model init, per-step directives, sampling noise) derive
their own 64-bit seed from the root plus a label path, so any stage can be
replayed in isolation.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(root_seed: int, *labels) -> int:
    """Derive a child seed from a root seed and a label path.

    Labels may be strings or integers; the same path always yields the same
    child seed, and distinct paths are independent for practical purposes
    (SHA-256 of the encoded path).
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & _MASK64


def rng_for(root_seed: int, *labels) -> np.random.Generator:
    """A fresh PCG64 generator for the given seed path."""
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, *labels)))
