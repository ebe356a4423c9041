"""Deterministic RNG substreams derived from a root seed plus string scope keys.

Every stochastic step in the pipeline (fold shuffles, chunk shuffles, tag
remapping, choice shuffling) draws from its own substream keyed by what it
is for, never from a shared sequential stream.  This makes results
independent of evaluation order and safe to parallelize.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *scope: object) -> int:
    """Collapse (root seed, scope keys) into a stable 128-bit integer seed.

    Uses SHA-256 rather than hash() so streams are reproducible across
    processes and interpreter versions.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode("utf-8"))
    for part in scope:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def derive_rng(root: int, *scope: object) -> np.random.Generator:
    """A fresh Generator seeded from the (root, scope) substream key."""
    return np.random.default_rng(derive_seed(root, *scope))
