from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..numerics import RngStream
from ..text import hashed_counts

N_BUCKETS = 4096


class EvalEmbedder:
    """Sentence-embedding stand-in: hashed word unigrams plus character
    trigrams, randomly projected to ``dim`` and unit-normalised.

    Uses its own hash salt and projection, so it shares nothing with any
    victim's encoders.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed
        gen = RngStream(seed, "eval-embedder").generator()
        self._proj = gen.standard_normal((dim, N_BUCKETS)) / np.sqrt(dim)
        self._embed = lru_cache(maxsize=4096)(self._embed_uncached)

    def _embed_uncached(self, text: str) -> np.ndarray:
        counts = hashed_counts(text, N_BUCKETS, f"eval-{self.seed}", trigrams=True)
        v = self._proj @ counts
        v.setflags(write=False)
        return v / np.linalg.norm(v)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        return self._embed(text)

    def similarity(self, a: str, b: str) -> float:
        if a == b:
            self.embed(a)
            return 1.0
        return float(np.clip(self.embed(a) @ self.embed(b), -1.0, 1.0))


_DEFAULT: EvalEmbedder | None = None


def default_embedder() -> EvalEmbedder:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = EvalEmbedder()
    return _DEFAULT


def similarity(a: str, b: str, embedder: EvalEmbedder | None = None) -> float:
    """1 - cosine distance between the two texts' embeddings."""
    return (embedder or default_embedder()).similarity(a, b)
