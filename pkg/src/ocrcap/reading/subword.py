"""Deterministic hashed sub-word embeddings (a FastText-shaped stand-in).

A word is wrapped as ``<word>``; each character 3- to 6-gram maps to a
pseudo-random unit vector seeded from a hash of ``(seed, dim, ngram)``. The
embedding is their mean.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

MIN_N, MAX_N = 3, 6


def stable_seed(*parts) -> int:
    """64-bit seed from a blake2b digest of the ``repr`` of ``parts``."""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def char_ngrams(word: str, min_n: int = MIN_N, max_n: int = MAX_N) -> list[str]:
    wrapped = f"<{word}>"
    grams = []
    for n in range(min_n, max_n + 1):
        for i in range(len(wrapped) - n + 1):
            grams.append(wrapped[i:i + n])
    return grams


@lru_cache(maxsize=200_000)
def _ngram_vector(ngram: str, dim: int, seed: int) -> bytes:
    rng = np.random.default_rng(stable_seed("ngram", seed, dim, ngram))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).tobytes()


def subword_embed(word: str, dim: int, seed: int = 0) -> np.ndarray:
    if dim < 1:
        raise ValueError(f"embedding dim must be positive, got {dim}")
    grams = char_ngrams(word)
    if not grams:
        return np.zeros(dim)
    acc = np.zeros(dim)
    for g in grams:
        acc += np.frombuffer(_ngram_vector(g, dim, seed))
    return acc / len(grams)
