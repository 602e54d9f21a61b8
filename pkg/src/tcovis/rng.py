"""Deterministic random-stream derivation.

Every random draw in the library flows from a single 64-bit master seed.
Substreams are derived by hashing string labels (and optional integer
indices) into a ``numpy.random.SeedSequence`` that keys a Philox
counter-based generator, so corpora and parameter bundles are exactly
reproducible across runs, platforms, and any degree of parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np

GENERATOR_NAME = "philox4x64/seedsequence"

_MASK64 = (1 << 64) - 1


def _label_word(label) -> int:
    if isinstance(label, str):
        digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return int(label) & _MASK64


def stream(seed: int, *labels) -> np.random.Generator:
    """Return the Philox generator for (seed, labels).

    Labels may be strings or integers; the same tuple always yields an
    identical stream, and distinct tuples yield statistically independent
    ones.
    """
    words = [int(seed) & _MASK64] + [_label_word(lab) for lab in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derive_seed(seed: int, *labels) -> int:
    """Collapse (seed, labels) into a fresh 64-bit seed for a child scope."""
    words = [int(seed) & _MASK64] + [_label_word(lab) for lab in labels]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])
