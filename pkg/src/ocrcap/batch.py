"""Padding scenes into fixed-shape numpy arrays for batched forward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .reading import PHOC_SIZE, Scene, normalize_box
from .reading.features import object_appearance, ocr_appearance, ocr_phoc, ocr_subword
from .vocab import Vocabulary


@dataclass
class SceneBatch:
    scene_ids: list
    obj_fr: np.ndarray      # [B, M, f_obj]
    obj_box: np.ndarray     # [B, M, 4]
    obj_pad: np.ndarray     # [B, M] bool
    ocr_ft: np.ndarray      # [B, N, f_ft]
    ocr_fr: np.ndarray      # [B, N, f_ocr]
    ocr_phoc: np.ndarray    # [B, N, 604]
    ocr_box: np.ndarray     # [B, N, 4]
    ocr_conf: np.ndarray    # [B, N]
    ocr_pad: np.ndarray     # [B, N] bool
    ocr_texts: list         # B lists of N entries; None marks padding
    dup_index: np.ndarray   # [B, N] vocab slot sharing the OCR text, -1 if none

    def __len__(self) -> int:
        return len(self.scene_ids)

    def take(self, idx) -> "SceneBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return SceneBatch(
            [self.scene_ids[i] for i in idx], self.obj_fr[idx], self.obj_box[idx], self.obj_pad[idx],
            self.ocr_ft[idx], self.ocr_fr[idx], self.ocr_phoc[idx], self.ocr_box[idx],
            self.ocr_conf[idx], self.ocr_pad[idx], [self.ocr_texts[i] for i in idx], self.dup_index[idx])


def kept_ocr_indices(scene: Scene, n: int) -> list[int]:
    """Slots kept when a scene has more than ``n`` tokens: the most confident, in original order."""
    if len(scene.ocr) <= n:
        return list(range(len(scene.ocr)))
    ranked = sorted(range(len(scene.ocr)), key=lambda i: -scene.ocr[i].conf)
    return sorted(ranked[:n])


def encode_scenes(scenes: Sequence[Scene], cfg: ModelConfig, vocab: Vocabulary) -> SceneBatch:
    B, M, N = len(scenes), cfg.max_objects, cfg.max_ocr
    out = SceneBatch(
        [s.scene_id for s in scenes],
        np.zeros((B, M, cfg.f_obj)), np.zeros((B, M, 4)), np.ones((B, M), dtype=bool),
        np.zeros((B, N, cfg.f_ft)), np.zeros((B, N, cfg.f_ocr)), np.zeros((B, N, PHOC_SIZE)),
        np.zeros((B, N, 4)), np.zeros((B, N)), np.ones((B, N), dtype=bool),
        [], np.full((B, N), -1, dtype=np.int64))
    for b, scene in enumerate(scenes):
        for m, obj in enumerate(scene.objects[:M]):
            out.obj_fr[b, m] = object_appearance(scene, obj, cfg.f_obj)
            out.obj_box[b, m] = normalize_box(obj.box, scene.width, scene.height, scene.scene_id)
            out.obj_pad[b, m] = False
        texts = [None] * N
        for slot, i in enumerate(kept_ocr_indices(scene, N)):
            tok = scene.ocr[i]
            out.ocr_ft[b, slot] = ocr_subword(tok, cfg.f_ft, cfg.subword_seed)
            out.ocr_fr[b, slot] = ocr_appearance(scene, tok, cfg.f_ocr)
            out.ocr_phoc[b, slot] = ocr_phoc(tok)
            out.ocr_box[b, slot] = normalize_box(tok.box, scene.width, scene.height, scene.scene_id)
            out.ocr_conf[b, slot] = tok.conf
            out.ocr_pad[b, slot] = False
            texts[slot] = tok.text
            n = vocab.index(tok.text)
            if n is not None:
                out.dup_index[b, slot] = n
        out.ocr_texts.append(texts)
    return out


def kept_tokens(scene: Scene, n: int):
    return [scene.ocr[i] for i in kept_ocr_indices(scene, n)]
