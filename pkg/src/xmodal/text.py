"""Stable hashed bag-of-features for short texts."""

from __future__ import annotations

import hashlib

import numpy as np


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def _bucket(feature: str, salt: str, n_buckets: int) -> int:
    digest = hashlib.blake2b(f"{salt}\x1f{feature}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n_buckets


def hashed_counts(
    text: str, n_buckets: int, salt: str, *, trigrams: bool = False
) -> np.ndarray:
    """Counts of whitespace tokens (and optionally character trigrams) hashed
    into ``n_buckets`` bins. Python's ``hash`` is salted per process, so
    blake2b is used instead."""
    counts = np.zeros(n_buckets)
    tokens = tokenize(text)
    for tok in tokens:
        counts[_bucket("w:" + tok, salt, n_buckets)] += 1.0
    if trigrams:
        for tok in tokens:
            padded = f"#{tok}#"
            for i in range(len(padded) - 2):
                counts[_bucket("c:" + padded[i : i + 3], salt, n_buckets)] += 1.0
    return counts
