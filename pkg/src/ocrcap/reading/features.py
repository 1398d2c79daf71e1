"""Per-token and per-object feature vectors, synthesized when a file lacks them."""

from __future__ import annotations

import numpy as np

from .phoc import phoc_encode
from .scenes import ObjectRegion, OcrToken, Scene, SceneFormatError
from .subword import stable_seed, subword_embed


def _synth(dim: int, *key) -> np.ndarray:
    return np.random.default_rng(stable_seed(*key)).standard_normal(dim)


def _given(feat, dim: int, what: str, scene_id: str) -> np.ndarray:
    arr = np.asarray(feat, dtype=np.float64)
    if arr.shape != (dim,):
        raise SceneFormatError(f"scene {scene_id}: {what} feature has dim {arr.size}, model expects {dim}")
    return arr


def object_appearance(scene: Scene, obj: ObjectRegion, dim: int) -> np.ndarray:
    if obj.feat is not None:
        return _given(obj.feat, dim, "object", scene.scene_id)
    return _synth(dim, "object", scene.scene_id, tuple(obj.box), dim)


def ocr_appearance(scene: Scene, tok: OcrToken, dim: int) -> np.ndarray:
    if tok.feat is not None:
        return _given(tok.feat, dim, "OCR", scene.scene_id)
    return _synth(dim, "ocr", scene.scene_id, tok.text, tuple(tok.box), dim)


def ocr_subword(tok: OcrToken, dim: int, seed: int = 0) -> np.ndarray:
    return subword_embed(tok.text, dim, seed)


def ocr_phoc(tok: OcrToken) -> np.ndarray:
    return phoc_encode(tok.text)
