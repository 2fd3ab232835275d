"""Small shared helpers: seeded RNG derivation, file digests, float formatting."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

# Stream tags so every consumer of randomness gets an independent,
# reconstructible generator from one root seed.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_NEGATIVES = 2
STREAM_BLOCKS = 3
STREAM_COVIEW = 4
STREAM_SPLIT = 5
STREAM_EVAL = 6
STREAM_SYNTH = 7


def derive_rng(*tokens: int) -> np.random.Generator:
    """Build a generator from a tuple of non-negative integer tokens.

    The same tokens always yield the same stream, which is what makes
    resumed training and repeated pipelines bit-reproducible.
    """
    toks = [int(t) for t in tokens]
    if any(t < 0 for t in toks):
        raise ValueError(f"seed tokens must be non-negative, got {toks}")
    return np.random.default_rng(np.random.SeedSequence(toks))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt_float(x: float) -> str:
    """Round-trippable, locale-independent float formatting for text dumps."""
    return format(float(x), ".17g")
