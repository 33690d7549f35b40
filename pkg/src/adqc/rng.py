"""Deterministic random streams.

All randomness in the package goes through :func:`substream`: a Philox-4x64
counter-based generator keyed by the run seed and a tuple of labels (purpose,
respondent, video, ...). Each label tuple gets its own independent stream, so
adding a respondent never shifts the draws seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_words(labels) -> list:
    digest = hashlib.sha256("\x1f".join(str(x) for x in labels).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must fit in 64 unsigned bits")
    return seed


def substream(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator for ``(seed, *labels)``."""
    entropy = [check_seed(seed), *_label_words(labels)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
