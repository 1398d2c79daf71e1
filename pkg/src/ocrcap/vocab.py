from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

PAD, BOS, EOS = "<pad>", "<s>", "</s>"
SPECIALS = (PAD, BOS, EOS)


def count_words(captions: Iterable[Sequence[str]]) -> Counter:
    counts: Counter = Counter()
    for cap in captions:
        counts.update(cap)
    return counts


@dataclass
class Vocabulary:
    """Fixed word list; specials occupy slots 0-2."""

    words: list
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.words[:3]) != SPECIALS:
            raise ValueError("vocabulary must start with <pad>, <s>, </s>")
        self._index = {w: i for i, w in enumerate(self.words)}
        if len(self._index) != len(self.words):
            raise ValueError("duplicate vocabulary words")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> Optional[int]:
        return self._index.get(word)

    @property
    def pad(self) -> int:
        return 0

    @property
    def bos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    def to_dict(self) -> dict:
        return {"words": list(self.words), "counts": {w: self.counts[w] for w in self.words if w in self.counts}}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["words"]), dict(d.get("counts", {})))


def build_vocabulary(captions: Iterable[Sequence[str]], min_count: int = 10) -> Vocabulary:
    """Specials, then words with count >= ``min_count`` by descending count, ties lexicographic."""
    counts = count_words(captions)
    kept = sorted((w for w, c in counts.items() if c >= min_count and w not in SPECIALS),
                  key=lambda w: (-counts[w], w))
    return Vocabulary(list(SPECIALS) + kept, {w: counts[w] for w in kept})
