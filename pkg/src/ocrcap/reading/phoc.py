"""Pyramidal histogram of characters (PHOC) word descriptors.

Layout (604 bits): unigram levels 2, 3, 4, 5 over ``a-z0-9`` (504 bits),
followed by a level-2 histogram over 50 common English bigrams (100 bits).
"""

from __future__ import annotations

import re
import string
from functools import lru_cache
from importlib import resources

import numpy as np

ALPHABET = string.ascii_lowercase + string.digits
UNIGRAM_LEVELS = (2, 3, 4, 5)
BIGRAM_LEVELS = (2,)
_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}
_DROP = re.compile(r"[^a-z0-9]")


def _load_bigrams() -> tuple:
    text = resources.files("ocrcap.reading").joinpath("data/phoc_bigrams.txt").read_text()
    return tuple(line.strip() for line in text.splitlines() if line.strip())


BIGRAMS = _load_bigrams()
_BIGRAM_INDEX = {b: i for i, b in enumerate(BIGRAMS)}
UNIGRAM_SIZE = len(ALPHABET) * sum(UNIGRAM_LEVELS)
PHOC_SIZE = UNIGRAM_SIZE + len(BIGRAMS) * sum(BIGRAM_LEVELS)


def _regions(start: int, stop: int, n: int, level: int):
    """Regions at ``level`` holding at least half of the span [start/n, stop/n).

    Works in units of 1/(n*level) so the 0.5 comparison is exact.
    """
    lo, hi = start * level, stop * level
    for r in range(level):
        overlap = min(hi, (r + 1) * n) - max(lo, r * n)
        if 2 * overlap >= hi - lo:
            yield r


@lru_cache(maxsize=65536)
def _phoc_cached(word: str) -> bytes:
    vec = np.zeros(PHOC_SIZE, dtype=np.uint8)
    n = len(word)
    offset = 0
    for level in UNIGRAM_LEVELS:
        for k, ch in enumerate(word):
            for r in _regions(k, k + 1, n, level):
                vec[offset + r * len(ALPHABET) + _CHAR_INDEX[ch]] = 1
        offset += level * len(ALPHABET)
    for level in BIGRAM_LEVELS:
        for k in range(n - 1):
            b = _BIGRAM_INDEX.get(word[k:k + 2])
            if b is None:
                continue
            for r in _regions(k, k + 2, n, level):
                vec[offset + r * len(BIGRAMS) + b] = 1
        offset += level * len(BIGRAMS)
    return vec.tobytes()


def phoc_encode(word: str) -> np.ndarray:
    """Binary PHOC vector for ``word``; characters outside ``a-z0-9`` are dropped."""
    cleaned = _DROP.sub("", word.lower())
    if not cleaned:
        return np.zeros(PHOC_SIZE)
    return np.frombuffer(_phoc_cached(cleaned), dtype=np.uint8).astype(np.float64)
