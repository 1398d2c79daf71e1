"""Parameter layout and the full teacher-forced forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import SceneBatch
from .config import ModelConfig
from .embedding import embed_objects, embed_ocr_tokens, embed_prev_outputs
from .generation import add_duplicate_scores_indexed, concat_scores, pointer_scores, vocab_scores
from .mmt import ATTN_KEYS, MmtOutput, mmt_forward
from .reading import PHOC_SIZE
from .tensor import ParameterStore, Tensor

NUM_SOURCE_TYPES = 2  # vocabulary, OCR copy


def init_params(cfg: ModelConfig, vocab_size: int, seed: int = 0) -> ParameterStore:
    """Weights ~ N(0, init_std), biases 0, layer-norm gains 1."""
    rng = np.random.default_rng(seed)
    d = cfg.d
    store = ParameterStore()

    def w(name, *shape):
        store.add(name, rng.normal(0.0, cfg.init_std, size=shape))

    def zeros(name, *shape):
        store.add(name, np.zeros(shape))

    def ln(prefix):
        store.add(prefix + ".ln.g", np.ones(d))
        zeros(prefix + ".ln.b", d)

    w("obj.fr.W", d, cfg.f_obj); zeros("obj.fr.b", d); ln("obj.fr")
    w("obj.box.W", d, 4); zeros("obj.box.b", d); ln("obj.box")
    w("ocr.feat.W_ft", d, cfg.f_ft)
    w("ocr.feat.W_fr", d, cfg.f_ocr)
    w("ocr.feat.W_phoc", d, PHOC_SIZE)
    zeros("ocr.feat.b", d); ln("ocr.feat")
    w("ocr.box.W", d, 4); zeros("ocr.box.b", d); ln("ocr.box")
    if cfg.confidence_mode == "embed":
        w("ocr.conf.W", d, 1); zeros("ocr.conf.b", d); ln("ocr.conf")
    w("dec.pos", cfg.max_steps, d)
    w("dec.type", NUM_SOURCE_TYPES, d)
    ln("dec")
    for layer in range(cfg.layers):
        p = f"mmt.{layer}."
        for k in ATTN_KEYS:
            if k.startswith("W"):
                w(p + "attn." + k, d, d)
            else:
                zeros(p + "attn." + k, d)
        store.add(p + "ln1.g", np.ones(d)); zeros(p + "ln1.b", d)
        w(p + "ffn.W1", cfg.ffn_dim, d); zeros(p + "ffn.b1", cfg.ffn_dim)
        w(p + "ffn.W2", d, cfg.ffn_dim); zeros(p + "ffn.b2", d)
        store.add(p + "ln2.g", np.ones(d)); zeros(p + "ln2.b", d)
    w("ptr.Wo", d, d); zeros("ptr.bo", d)
    w("ptr.Wd", d, d); zeros("ptr.bd", d)
    w("voc.W", vocab_size, d); zeros("voc.b", vocab_size)
    return store


def embed_scene_batch(params: ParameterStore, cfg: ModelConfig, batch: SceneBatch):
    x_obj = embed_objects(params, batch.obj_fr, batch.obj_box, batch.obj_pad, cfg.ln_eps)
    x_ocr = embed_ocr_tokens(params, batch.ocr_ft, batch.ocr_fr, batch.ocr_phoc, batch.ocr_box,
                             batch.ocr_conf, batch.ocr_pad, cfg.confidence_mode, cfg.ln_eps)
    return x_obj, x_ocr


@dataclass
class ForwardResult:
    scores: Tensor      # [B, T, V + N]
    mmt: MmtOutput


def forward_scores(params: ParameterStore, cfg: ModelConfig, batch: SceneBatch, slots,
                   embedded=None, return_attention: bool = False) -> ForwardResult:
    """Scores for every decode row given the previous-output ``slots [B, T]``.

    ``embedded`` may carry a precomputed ``(x_obj, x_ocr)`` pair so that
    step-by-step decoding does not re-embed the scene.
    """
    x_obj, x_ocr = embedded if embedded is not None else embed_scene_batch(params, cfg, batch)
    x_dec = embed_prev_outputs(params, slots, x_ocr, cfg.ln_eps)
    out = mmt_forward(x_obj, x_ocr, x_dec, cfg, params, batch.obj_pad, batch.ocr_pad,
                      return_attention=return_attention)
    y_ocr = pointer_scores(out.z_dec, out.z_ocr, params)
    y_voc = vocab_scores(out.z_dec, params)
    y_add = add_duplicate_scores_indexed(y_voc, y_ocr, batch.dup_index)
    return ForwardResult(concat_scores(y_add, y_ocr), out)
