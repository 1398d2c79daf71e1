"""Scene ingestion: OCR tokens with confidences, object regions, features."""

from .features import object_appearance, ocr_appearance, ocr_phoc, ocr_subword
from .phoc import PHOC_SIZE, phoc_encode
from .scenes import (
    DEFAULT_CONF,
    ObjectRegion,
    OcrToken,
    Scene,
    SceneFormatError,
    box_iou,
    load_scenes,
    make_token,
    merge_ocr_results,
    normalize_box,
    normalize_text,
    save_scenes,
    scene_from_record,
    scene_to_record,
)
from .subword import char_ngrams, stable_seed, subword_embed
from .synth import TASKS, TaskSpec, UnknownTaskError, caption_for, generate_scene, generate_scenes, lexicon

__all__ = [
    "DEFAULT_CONF", "PHOC_SIZE", "TASKS", "ObjectRegion", "OcrToken", "Scene", "SceneFormatError",
    "TaskSpec", "UnknownTaskError", "box_iou", "caption_for", "char_ngrams", "generate_scene",
    "generate_scenes", "lexicon", "load_scenes", "make_token", "merge_ocr_results", "normalize_box",
    "normalize_text", "object_appearance", "ocr_appearance", "ocr_phoc", "ocr_subword",
    "phoc_encode", "save_scenes", "scene_from_record", "scene_to_record", "stable_seed",
    "subword_embed",
]
