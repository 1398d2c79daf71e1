"""Greedy caption decoding, batched over scenes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .batch import SceneBatch, encode_scenes
from .config import ModelConfig
from .generation import DecodeState, build_repetition_mask, greedy_step
from .model import embed_scene_batch, forward_scores
from .reading import Scene
from .tensor import NEG_SENTINEL, ParameterStore
from .vocab import EOS, Vocabulary


@dataclass
class DecodeResult:
    scene_id: str
    caption: list
    tokens: list = field(default_factory=list)   # TokenRef per emitted token, </s> included
    steps: Optional[list] = None                  # per step: [(surface, score, masked), ...]

    def to_record(self) -> dict:
        rec = {"scene_id": self.scene_id, "caption": self.caption}
        if self.steps is not None:
            rec["steps"] = [[[s, float(v), bool(m)] for s, v, m in step] for step in self.steps]
        return rec


def _surface(slot: int, vocab: Vocabulary, texts) -> str:
    V = len(vocab)
    return vocab.words[slot] if slot < V else texts[slot - V]


def _top_k(y: np.ndarray, m: np.ndarray, k: int, vocab: Vocabulary, texts) -> list:
    valid = [i for i in range(y.shape[0]) if i < len(vocab) or texts[i - len(vocab)] is not None]
    order = sorted(valid, key=lambda i: (-y[i], i))[:k]
    return [(_surface(i, vocab, texts), float(y[i]), bool(m[i] == NEG_SENTINEL)) for i in order]


def greedy_decode(params: ParameterStore, cfg: ModelConfig, batch: SceneBatch, vocab: Vocabulary,
                  common_words, use_mask: bool = True, top_k: int = 0,
                  max_steps: Optional[int] = None) -> list:
    """Decode every scene in ``batch`` from ``<s>`` until ``</s>`` or ``max_steps``.

    Each step reruns the whole transformer on the history so far (no
    caching). With ``use_mask=False`` only the structural entries of the
    mask stay active.
    """
    T_max = cfg.max_steps if max_steps is None else min(max_steps, cfg.max_steps)
    B, V = len(batch), len(vocab)
    embedded = embed_scene_batch(params, cfg, batch)
    states = [DecodeState() for _ in range(B)]
    steps = [[] for _ in range(B)] if top_k > 0 else None
    done = np.zeros(B, dtype=bool)
    slots = np.full((B, 1), vocab.bos, dtype=np.int64)
    for t in range(T_max):
        live = np.flatnonzero(~done)
        if live.size == 0:
            break
        sub = batch if live.size == B else batch.take(live)
        emb = embedded if live.size == B else (embedded[0][live], embedded[1][live])
        y = forward_scores(params, cfg, sub, slots[live], embedded=emb).scores.data[:, t, :]
        nxt = np.full(B, vocab.eos, dtype=np.int64)
        for j, b in enumerate(live):
            texts = batch.ocr_texts[b]
            st = states[b]
            mask = build_repetition_mask(st, vocab, common_words, texts, batch.ocr_pad[b],
                                         use_history=use_mask)
            st.mask = mask
            ref = greedy_step(y[j], mask, vocab, texts)
            if steps is not None:
                steps[b].append(_top_k(y[j], mask.m, top_k, vocab, texts))
            st.push(ref)
            nxt[b] = ref.slot(V)
            if ref.text == EOS and ref.source == "vocab":
                done[b] = True
        slots = np.concatenate([slots, nxt[:, None]], axis=1)
    results = []
    for b, st in enumerate(states):
        caption = [r.text for r in st.emitted if not (r.source == "vocab" and r.index == vocab.eos)]
        results.append(DecodeResult(batch.scene_ids[b], caption, list(st.emitted),
                                    steps[b] if steps is not None else None))
    return results


def decode_captions(params: ParameterStore, cfg: ModelConfig, scenes: Sequence[Scene],
                    vocab: Vocabulary, common_words, use_mask: bool = True, top_k: int = 0,
                    chunk: int = 64) -> list:
    out = []
    for start in range(0, len(scenes), chunk):
        batch = encode_scenes(scenes[start:start + chunk], cfg, vocab)
        out.extend(greedy_decode(params, cfg, batch, vocab, common_words, use_mask, top_k))
    return out


def decode_caption(scene: Scene, params: ParameterStore, cfg: ModelConfig, vocab: Vocabulary,
                   common_words, use_mask: bool = True) -> list:
    return decode_captions(params, cfg, [scene], vocab, common_words, use_mask)[0].caption
