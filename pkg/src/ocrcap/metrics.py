"""BLEU-4, CIDEr-D and a repetition diagnostic over tokenized captions."""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_N = 4
CIDER_SIGMA = 6.0


class MetricError(ValueError):
    """Corpus unsuitable for the requested metric."""


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _pairs(corpus):
    """Accept ``{id: (hyp, refs)}`` or a sequence of ``(hyp, refs)``."""
    items = list(corpus.values()) if isinstance(corpus, Mapping) else list(corpus)
    for hyp, refs in items:
        if not refs:
            raise MetricError("every hypothesis needs at least one reference")
    return items


def bleu_stats(hyp: Sequence[str], refs: Sequence[Sequence[str]]) -> np.ndarray:
    """``[hyp_len, ref_len, match_1, total_1, ..., match_4, total_4]`` for one pair."""
    stats = np.zeros(2 + 2 * MAX_N)
    c = len(hyp)
    stats[0] = c
    # closest reference length, shorter one on ties
    stats[1] = min((abs(len(r) - c), len(r)) for r in refs)[1]
    for n in range(1, MAX_N + 1):
        h = ngrams(hyp, n)
        best: Counter = Counter()
        for r in refs:
            best |= ngrams(r, n)
        stats[2 * n] = sum(min(cnt, best[g]) for g, cnt in h.items())
        stats[2 * n + 1] = max(c - n + 1, 0)
    return stats


def _bleu_from_stats(stats: np.ndarray, smooth: bool) -> float:
    c, r = stats[0], stats[1]
    log_p = 0.0
    for n in range(1, MAX_N + 1):
        m, t = stats[2 * n], stats[2 * n + 1]
        if smooth:
            m, t = m + 1.0, t + 1.0
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / MAX_N
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def bleu4(corpus, smooth: bool = False) -> float:
    """Corpus BLEU-4: pooled clipped n-gram precisions, uniform weights, brevity penalty.

    ``smooth`` adds one to every precision's numerator and denominator.
    """
    items = _pairs(corpus)
    if not items:
        raise MetricError("BLEU-4 of an empty corpus")
    total = sum(bleu_stats(h, refs) for h, refs in items)
    return _bleu_from_stats(total, smooth)


class _CiderVectors:
    def __init__(self, refs_per_item: Sequence[Sequence[Sequence[str]]]):
        if len(refs_per_item) < 2:
            raise MetricError("CIDEr-D needs a corpus of at least 2 scenes for document frequencies")
        self.df: Counter = Counter()
        for refs in refs_per_item:
            seen = set()
            for r in refs:
                for n in range(1, MAX_N + 1):
                    seen.update(ngrams(r, n))
            self.df.update(seen)
        self.log_n = math.log(float(len(refs_per_item)))

    def vec(self, tokens):
        vecs, norms = [], []
        for n in range(1, MAX_N + 1):
            v = {g: tf * (self.log_n - math.log(max(1.0, self.df[g]))) for g, tf in ngrams(tokens, n).items()}
            vecs.append(v)
            norms.append(math.sqrt(sum(x * x for x in v.values())))
        return vecs, norms, len(tokens)

    @staticmethod
    def sim(h, r) -> np.ndarray:
        (vh, nh, lh), (vr, nr, lr) = h, r
        delta = float(lh - lr)
        out = np.zeros(MAX_N)
        for n in range(MAX_N):
            val = sum(min(x, vr[n].get(g, 0.0)) * vr[n].get(g, 0.0) for g, x in vh[n].items())
            if nh[n] != 0 and nr[n] != 0:
                val /= nh[n] * nr[n]
            out[n] = val * math.exp(-(delta ** 2) / (2 * CIDER_SIGMA ** 2))
        return out


def cider_d_scores(corpus) -> list:
    """Per-scene CIDEr-D (x10 convention)."""
    items = _pairs(corpus)
    cv = _CiderVectors([refs for _, refs in items])
    scores = []
    for hyp, refs in items:
        h = cv.vec(hyp)
        acc = np.zeros(MAX_N)
        for r in refs:
            acc += cv.sim(h, cv.vec(r))
        scores.append(float(np.mean(acc) / len(refs) * 10.0))
    return scores


def cider_d(corpus) -> float:
    return float(np.mean(cider_d_scores(corpus)))


def repetition_rate(captions: Iterable[Sequence[str]], common_words) -> float:
    """Fraction of captions with some non-common token occurring at least twice."""
    common = set(common_words)
    caps = list(captions)
    if not caps:
        return 0.0
    rep = sum(1 for cap in caps if any(c >= 2 for w, c in Counter(cap).items() if w not in common))
    return rep / len(caps)


def per_scene_scores(corpus: Mapping[str, tuple]) -> dict:
    """``{scene_id: {"bleu4": smoothed sentence BLEU, "cider": CIDEr-D}}``."""
    ids = list(corpus)
    cider = cider_d_scores([corpus[i] for i in ids]) if len(ids) >= 2 else [float("nan")] * len(ids)
    return {i: {"bleu4": _bleu_from_stats(bleu_stats(*corpus[i]), smooth=True), "cider": c}
            for i, c in zip(ids, cider)}
