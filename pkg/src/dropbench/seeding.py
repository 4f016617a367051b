"""Stable seed derivation shared by every stochastic component.

All randomness in the pipeline flows through `derive_seed`, which hashes an
arbitrary tuple of labels into a 64-bit integer.  Using sha256 (rather than
Python's builtin `hash`) keeps streams identical across processes and runs,
which the determinism guarantees depend on.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Map a tuple of labels (ints, strings, floats as fixed strings) to a seed.

    Floats should be pre-quantized by the caller (e.g. ``round(k * 100)``) so
    the derivation never depends on float repr.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(*parts: object) -> np.random.Generator:
    """Fresh Generator for an addressable point in the pipeline."""
    return np.random.default_rng(derive_seed(*parts))
