"""Synthetic scenes whose reference captions follow simple, checkable rules.

Tasks
-----
copy-max-conf
    ``a sign that says X`` where X is the highest-confidence OCR token.
no-repeat-pairs
    ``a X sign next to a Y sign`` with X, Y the two most confident tokens.
    References repeat the common words ``a`` and ``sign`` on purpose.
describe-object
    ``a photo of a C`` where C is the class of the largest object; object
    appearance features are class prototypes plus noise.

Confidence is drawn independently of every other feature, so a model can
only find the key token through the confidence channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .scenes import ObjectRegion, OcrToken, Scene
from .subword import stable_seed


class UnknownTaskError(ValueError):
    pass


TASKS = ("copy-max-conf", "describe-object", "no-repeat-pairs")
OBJECT_CLASSES = ("box", "ball", "cup", "car", "tree", "dog", "lamp", "chair")
TEMPLATE_WORDS = frozenset({"a", "sign", "that", "says", "next", "to", "photo", "of"} | set(OBJECT_CLASSES))

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr", "pl")
_VOWELS = ("a", "e", "i", "o", "u")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    num_ocr: int = 8
    max_objects: int = 4
    feat_dim: int = 32
    width: int = 640
    height: int = 480
    lexicon_size: int = 500

    def __post_init__(self):
        if self.name not in TASKS:
            raise UnknownTaskError(f"unknown task {self.name!r}; choose from {', '.join(TASKS)}")
        if self.num_ocr < 2:
            raise ValueError("tasks need at least two OCR tokens per scene")


@lru_cache(maxsize=8)
def lexicon(size: int = 500) -> tuple:
    """Fixed list of pronounceable pseudo-words, disjoint from template words."""
    rng = np.random.default_rng(20210)
    words: list[str] = []
    seen = set(TEMPLATE_WORDS)
    while len(words) < size:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return tuple(words)


def _random_box(rng, width: int, height: int) -> tuple:
    w = int(rng.integers(16, width // 3))
    h = int(rng.integers(12, height // 3))
    x0 = int(rng.integers(0, width - w))
    y0 = int(rng.integers(0, height - h))
    return (float(x0), float(y0), float(x0 + w), float(y0 + h))


def _class_prototype(cls: str, dim: int) -> np.ndarray:
    return np.random.default_rng(stable_seed("class-prototype", cls, dim)).standard_normal(dim)


def caption_for(task: str, ocr: Sequence[OcrToken], objects: Sequence[ObjectRegion] = (),
                object_classes: Sequence[str] = ()) -> list[str]:
    """Reference caption by the task rule. Confidence ties go to the lowest index."""
    if task == "copy-max-conf":
        best = int(np.argmax([t.conf for t in ocr]))
        return ["a", "sign", "that", "says", ocr[best].text]
    if task == "no-repeat-pairs":
        order = sorted(range(len(ocr)), key=lambda i: (-ocr[i].conf, i))
        return ["a", ocr[order[0]].text, "sign", "next", "to", "a", ocr[order[1]].text, "sign"]
    if task == "describe-object":
        areas = [(o.box[2] - o.box[0]) * (o.box[3] - o.box[1]) for o in objects]
        return ["a", "photo", "of", "a", object_classes[int(np.argmax(areas))]]
    raise UnknownTaskError(f"unknown task {task!r}")


def _confidences(rng, task: str, n: int) -> np.ndarray:
    conf = rng.uniform(0.05, 0.75, size=n)
    order = rng.permutation(n)
    if task == "no-repeat-pairs":
        conf[order[0]] = rng.uniform(0.92, 1.0)
        conf[order[1]] = rng.uniform(0.80, 0.88)
    else:
        conf[order[0]] = rng.uniform(0.85, 1.0)
    return np.round(conf, 4)


def generate_scene(seed, spec: TaskSpec | str, scene_id: str | None = None) -> Scene:
    if isinstance(spec, str):
        spec = TaskSpec(spec)
    rng = np.random.default_rng(seed)
    words = lexicon(spec.lexicon_size)
    picks = rng.choice(len(words), size=spec.num_ocr, replace=False)
    confs = _confidences(rng, spec.name, spec.num_ocr)
    ocr = tuple(
        OcrToken(words[int(w)], float(c), _random_box(rng, spec.width, spec.height), "synthetic")
        for w, c in zip(picks, confs))

    n_obj = int(rng.integers(1, spec.max_objects + 1))
    objects, classes = [], []
    for _ in range(n_obj):
        box = _random_box(rng, spec.width, spec.height)
        feat = None
        if spec.name == "describe-object":
            cls = OBJECT_CLASSES[int(rng.integers(len(OBJECT_CLASSES)))]
            classes.append(cls)
            vec = _class_prototype(cls, spec.feat_dim) + 0.3 * rng.standard_normal(spec.feat_dim)
            feat = tuple(float(v) for v in np.round(vec, 6))
        objects.append(ObjectRegion(box, feat))

    caption = caption_for(spec.name, ocr, objects, classes)
    if scene_id is None:
        scene_id = f"{spec.name}-{seed}"
    return Scene(scene_id, spec.width, spec.height, tuple(objects), ocr, (tuple(caption),))


def generate_scenes(spec: TaskSpec | str, num_scenes: int, seed: int) -> list[Scene]:
    if isinstance(spec, str):
        spec = TaskSpec(spec)
    return [generate_scene([seed, i], spec, scene_id=f"{spec.name}-{seed}-{i:05d}")
            for i in range(num_scenes)]
