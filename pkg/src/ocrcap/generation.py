"""Caption scores, the repetition mask and greedy token selection.

Score layout over one decode step is ``[vocab (V) | OCR slots (N)]``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .tensor import NEG_SENTINEL, ContractError, ParameterStore, Tensor, as_tensor, make_op, ops
from .vocab import BOS, EOS, PAD, Vocabulary

VOCAB, OCR = "vocab", "ocr"


def pointer_scores(z_dec, z_ocr, params: ParameterStore) -> Tensor:
    """Bilinear copy scores ``(W_o z_ocr_i + b_o) . (W_d z_dec + b_d)``.

    ``z_dec`` is ``[d]`` or ``[..., T, d]``, ``z_ocr`` is ``[N, d]`` or
    ``[..., N, d]``; the result is ``[N]`` or ``[..., T, N]``.
    """
    z_dec, z_ocr = as_tensor(z_dec), as_tensor(z_ocr)
    single = z_dec.ndim == 1
    if single:
        z_dec = ops.reshape(z_dec, (1, z_dec.shape[0]))
    po = ops.linear(z_ocr, params["ptr.Wo"], params["ptr.bo"])
    pd = ops.linear(z_dec, params["ptr.Wd"], params["ptr.bd"])
    out = ops.matmul(pd, ops.swapaxes(po, -1, -2))
    return out[0] if single else out


def vocab_scores(z_dec, params: ParameterStore) -> Tensor:
    return ops.linear(z_dec, params["voc.W"], params["voc.b"])


def duplicate_index(ocr_texts: Sequence[Optional[str]], vocab: Vocabulary) -> np.ndarray:
    """Vocabulary slot sharing each OCR slot's text, or -1."""
    out = np.full(len(ocr_texts), -1, dtype=np.int64)
    for i, text in enumerate(ocr_texts):
        n = vocab.index(text) if text is not None else None
        if n is not None:
            out[i] = n
    return out


def add_duplicate_scores_indexed(y_voc, y_ocr, dup_index) -> Tensor:
    """Add each OCR score onto the vocab slot ``dup_index`` points to.

    ``y_voc`` is ``[B, T, V]``, ``y_ocr`` is ``[B, T, N]``, ``dup_index`` is
    ``[B, N]``. Slots are accumulated one at a time in slot order so the
    floating-point result matches a plain nested loop.
    """
    y_voc, y_ocr = as_tensor(y_voc), as_tensor(y_ocr)
    dup = np.asarray(dup_index, dtype=np.int64)
    B, N = dup.shape
    out = y_voc.data.copy()
    for i in range(N):
        rows = np.flatnonzero(dup[:, i] >= 0)
        if rows.size:
            out[rows, :, dup[rows, i]] += y_ocr.data[rows, :, i]

    def bw(g):
        g_ocr = np.zeros(y_ocr.shape)
        b, i = np.nonzero(dup >= 0)
        g_ocr[b, :, i] = g[b, :, dup[b, i]]
        return g, g_ocr

    return make_op(out, (y_voc, y_ocr), bw)


def add_duplicate_scores(y_voc, y_ocr, ocr_texts: Sequence[Optional[str]], vocab: Vocabulary) -> Tensor:
    """Single-step form: ``y_voc [V]``, ``y_ocr [N]`` and the slot texts."""
    y_voc, y_ocr = as_tensor(y_voc), as_tensor(y_ocr)
    dup = duplicate_index(ocr_texts, vocab)[None]
    out = add_duplicate_scores_indexed(ops.reshape(y_voc, (1, 1, -1)),
                                       ops.reshape(y_ocr, (1, 1, -1)), dup)
    return out[0, 0]


def concat_scores(y_add, y_ocr) -> Tensor:
    return ops.concat([y_add, y_ocr], axis=-1)


# ---------------------------------------------------------------------------
# inference-time masking and selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenRef:
    source: str   # VOCAB or OCR
    index: int    # vocab index or OCR slot
    text: str

    def slot(self, vocab_size: int) -> int:
        return self.index if self.source == VOCAB else vocab_size + self.index


@dataclass
class MaskVector:
    m: np.ndarray

    def masked(self) -> np.ndarray:
        return np.flatnonzero(self.m == NEG_SENTINEL)


@dataclass
class DecodeState:
    step: int = 0
    emitted: list = field(default_factory=list)
    mask: Optional[MaskVector] = None

    def push(self, ref: TokenRef) -> None:
        self.emitted.append(ref)
        self.step += 1


def common_words_from_counts(counts, C: int) -> frozenset:
    """The ``C`` most frequent words of a count map (ties lexicographic) plus ``</s>``."""
    if C < 0:
        raise ValueError("C must be >= 0")
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return frozenset(ranked[:C]) | {EOS}


def common_word_set(training_captions: Iterable[Sequence[str]], C: int) -> frozenset:
    counts = Counter()
    for cap in training_captions:
        counts.update(cap)
    return common_words_from_counts(counts, C)


def build_repetition_mask(state: DecodeState, vocab: Vocabulary, common_words,
                          ocr_texts: Sequence[Optional[str]], pad_flags=None,
                          use_history: bool = True) -> MaskVector:
    """Mask over ``[vocab | OCR]`` for the next step.

    ``<pad>``, ``<s>`` and padded OCR slots are always masked; ``</s>`` never
    is. With ``use_history`` every previously emitted non-common surface
    string masks its vocab slot and every OCR slot carrying the same text.
    """
    V, N = len(vocab), len(ocr_texts)
    pad = np.array([t is None for t in ocr_texts], dtype=bool) if pad_flags is None else np.asarray(pad_flags, bool)
    m = np.zeros(V + N)
    m[vocab.index(PAD)] = NEG_SENTINEL
    m[vocab.index(BOS)] = NEG_SENTINEL
    m[V:][pad] = NEG_SENTINEL
    if use_history:
        seen = {ref.text for ref in state.emitted} - set(common_words) - {EOS}
        for s in seen:
            n = vocab.index(s)
            if n is not None:
                m[n] = NEG_SENTINEL
            for i, text in enumerate(ocr_texts):
                if text == s:
                    m[V + i] = NEG_SENTINEL
    m[vocab.index(EOS)] = 0.0
    return MaskVector(m)


def greedy_step(y, mask: MaskVector, vocab: Vocabulary, ocr_texts: Sequence[Optional[str]]) -> TokenRef:
    """``argmax(y + m)`` with ties to the lowest index."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    m = mask.m
    if m.shape != y.shape:
        raise ContractError(f"mask shape {m.shape} != score shape {y.shape}")
    assert (m != NEG_SENTINEL).any(), "every position is masked"
    # over open entries y + m == y, so this is argmax(y + m) without sentinel arithmetic
    open_ = m != NEG_SENTINEL
    pick = int(np.flatnonzero(open_)[np.argmax(y[open_])])
    V = len(vocab)
    if pick < V:
        return TokenRef(VOCAB, pick, vocab.words[pick])
    return TokenRef(OCR, pick - V, ocr_texts[pick - V])
