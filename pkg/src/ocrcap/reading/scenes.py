"""Scene records, OCR-result merging and the line-oriented scene file format."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_CONF = 0.90
SOURCES = ("primary_ocr", "fallback_ocr", "synthetic")
_STRIP = string.punctuation + string.whitespace


class SceneFormatError(ValueError):
    """Malformed or invalid scene data."""


def normalize_text(text: str) -> str:
    return text.lower().strip(_STRIP)


Box = tuple  # (x_min, y_min, x_max, y_max) in pixels


def check_box(box: Sequence[float], width: float, height: float, scene_id: str = "?") -> Box:
    if len(box) != 4:
        raise SceneFormatError(f"scene {scene_id}: box needs 4 coordinates, got {list(box)}")
    x0, y0, x1, y1 = (float(v) for v in box)
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise SceneFormatError(
            f"scene {scene_id}: box {[x0, y0, x1, y1]} is degenerate or outside {width}x{height}")
    return (x0, y0, x1, y1)


def normalize_box(box: Sequence[float], width: float, height: float, scene_id: str = "?") -> np.ndarray:
    x0, y0, x1, y1 = check_box(box, width, height, scene_id)
    return np.array([x0 / width, y0 / height, x1 / width, y1 / height])


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class OcrToken:
    text: str
    conf: float
    box: Box
    source: str = "synthetic"
    feat: Optional[tuple] = None  # appearance feature; synthesized when absent

    def __post_init__(self):
        if self.source not in SOURCES:
            raise SceneFormatError(f"unknown OCR source {self.source!r}")
        if not 0.0 <= self.conf <= 1.0:
            raise SceneFormatError(f"confidence {self.conf} outside [0, 1] for token {self.text!r}")
        if not self.text:
            raise SceneFormatError("OCR token text is empty after normalization")


@dataclass(frozen=True)
class ObjectRegion:
    box: Box
    feat: Optional[tuple] = None


@dataclass(frozen=True)
class Scene:
    scene_id: str
    width: int
    height: int
    objects: tuple = ()
    ocr: tuple = ()
    captions: tuple = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SceneFormatError(f"scene {self.scene_id}: non-positive size {self.width}x{self.height}")
        for item in list(self.objects) + list(self.ocr):
            check_box(item.box, self.width, self.height, self.scene_id)

    def confidence_table(self) -> list[tuple[str, float]]:
        """The (text, confidence) pairs in OCR-slot order."""
        return [(t.text, t.conf) for t in self.ocr]


def make_token(text: str, box: Sequence[float], conf: Optional[float] = None,
               source: str = "synthetic", feat=None, c_default: float = DEFAULT_CONF) -> OcrToken:
    """Build a token with normalized text; fallback tokens without confidence get ``c_default``."""
    if conf is None:
        if source != "fallback_ocr":
            raise SceneFormatError(f"token {text!r} from {source} has no confidence")
        conf = c_default
    return OcrToken(normalize_text(text), float(conf), tuple(float(v) for v in box), source,
                    None if feat is None else tuple(float(v) for v in feat))


def merge_ocr_results(primary: Iterable[OcrToken], fallback: Iterable[OcrToken],
                      iou_threshold: float = 0.5, c_default: float = DEFAULT_CONF,
                      max_tokens: int = 50) -> list[OcrToken]:
    """Union of two OCR systems' tokens.

    A fallback token is a duplicate when a primary token has the same text and
    box IoU >= ``iou_threshold``; survivors are tagged ``fallback_ocr`` with
    confidence ``c_default``. The result is ordered by descending confidence
    (stable) and cut to ``max_tokens``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    primary = list(primary)
    merged = list(primary)
    for tok in fallback:
        dup = any(p.text == tok.text and box_iou(p.box, tok.box) >= iou_threshold for p in primary)
        if not dup:
            merged.append(OcrToken(tok.text, c_default, tok.box, "fallback_ocr", tok.feat))
    merged.sort(key=lambda t: -t.conf)
    return merged[:max_tokens]


# ---------------------------------------------------------------------------
# scene files: one JSON object per line
# ---------------------------------------------------------------------------

def _floats(values) -> list:
    return [float(v) for v in values]


def scene_to_record(scene: Scene) -> dict:
    objects = []
    for o in scene.objects:
        rec = {"box": _floats(o.box)}
        if o.feat is not None:
            rec["feat"] = _floats(o.feat)
        objects.append(rec)
    ocr = []
    for t in scene.ocr:
        rec = {"text": t.text, "conf": t.conf, "box": _floats(t.box), "source": t.source}
        if t.feat is not None:
            rec["feat"] = _floats(t.feat)
        ocr.append(rec)
    return {
        "scene_id": scene.scene_id,
        "width": scene.width,
        "height": scene.height,
        "objects": objects,
        "ocr": ocr,
        "captions": [list(c) for c in scene.captions],
    }


def scene_from_record(rec: dict, c_default: float = DEFAULT_CONF) -> Scene:
    if not isinstance(rec, dict):
        raise SceneFormatError("record is not an object")
    try:
        sid = str(rec["scene_id"])
        width, height = rec["width"], rec["height"]
        objects = tuple(
            ObjectRegion(tuple(_floats(o["box"])), None if o.get("feat") is None else tuple(_floats(o["feat"])))
            for o in rec.get("objects", []))
        ocr = tuple(
            make_token(t["text"], t["box"], t.get("conf"), t.get("source", "synthetic"),
                       t.get("feat"), c_default)
            for t in rec.get("ocr", []))
        captions = tuple(tuple(normalize_text(w) for w in cap) for cap in rec.get("captions", []))
    except KeyError as exc:
        raise SceneFormatError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SceneFormatError):
            raise
        raise SceneFormatError(str(exc)) from None
    return Scene(sid, width, height, objects, ocr, captions)


def save_scenes(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene), separators=(",", ":")) + "\n")


def load_scenes(path, c_default: float = DEFAULT_CONF) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(scene_from_record(json.loads(line), c_default))
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except SceneFormatError as exc:
                raise SceneFormatError(f"{path}:{lineno}: {exc}") from None
    return scenes


def read_records(path) -> Iterable[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for a JSON-lines file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SceneFormatError(f"{Path(path)}:{lineno}: invalid JSON ({exc.msg})") from None
