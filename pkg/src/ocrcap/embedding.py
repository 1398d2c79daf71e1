"""Projection of objects, OCR tokens and previous outputs into the shared d-space.

Object:  LN(W1 x_fr + b1) + LN(W2 x_box + b2)
OCR:     LN(W3 x_ft + W4 x_fr + W5 x_phoc + b3) + LN(W6 x_box + b6) [+ LN(W7 conf + b7)]

``confidence_mode`` selects how recognition confidence enters the OCR
embedding: ``embed`` adds the LN(W7 conf) term, ``multiply`` scales the
final row by the confidence, ``none`` ignores it.
"""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, ParameterStore, Tensor, ops


class EmbeddingError(ValueError):
    """Feature dimensions or values that do not fit the configured embedding."""


def _ln(params: ParameterStore, prefix: str, x, eps: float) -> Tensor:
    return ops.layer_norm(x, params[prefix + ".ln.g"], params[prefix + ".ln.b"], eps)


def _keep(pad) -> np.ndarray:
    return (~np.asarray(pad, dtype=bool)).astype(np.float64)[..., None]


def _check_dim(x, dim: int, what: str) -> None:
    if x.shape[-1] != dim:
        raise EmbeddingError(f"{what} features have dim {x.shape[-1]}, expected {dim}")


def embed_objects(params: ParameterStore, obj_fr, obj_box, obj_pad=None, eps: float = 1e-5) -> Tensor:
    """``[..., M, f_obj]`` appearance and ``[..., M, 4]`` boxes to ``[..., M, d]``."""
    obj_fr, obj_box = np.asarray(obj_fr, float), np.asarray(obj_box, float)
    _check_dim(obj_fr, params["obj.fr.W"].shape[1], "object appearance")
    _check_dim(obj_box, 4, "object box")
    a = _ln(params, "obj.fr", ops.linear(obj_fr, params["obj.fr.W"], params["obj.fr.b"]), eps)
    b = _ln(params, "obj.box", ops.linear(obj_box, params["obj.box.W"], params["obj.box.b"]), eps)
    out = ops.add(a, b)
    if obj_pad is not None:
        out = ops.mul(out, _keep(obj_pad))
    return out


def confidence_term(params: ParameterStore, conf, eps: float = 1e-5) -> Tensor:
    """LN(W7 conf + b7) for ``[...]``-shaped confidences."""
    c = np.asarray(conf, dtype=np.float64)[..., None]
    return _ln(params, "ocr.conf", ops.linear(c, params["ocr.conf.W"], params["ocr.conf.b"]), eps)


def embed_ocr_tokens(params: ParameterStore, ft, fr, phoc, box, conf, pad=None,
                     mode: str = "embed", eps: float = 1e-5) -> Tensor:
    """OCR slots ``[..., N, *]`` to ``[..., N, d]``; padded slots come out as zero rows."""
    ft, fr, phoc, box = (np.asarray(a, float) for a in (ft, fr, phoc, box))
    conf = np.asarray(conf, dtype=np.float64)
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise EmbeddingError(f"OCR confidence outside [0, 1]: min {conf.min()}, max {conf.max()}")
    _check_dim(ft, params["ocr.feat.W_ft"].shape[1], "OCR sub-word")
    _check_dim(fr, params["ocr.feat.W_fr"].shape[1], "OCR appearance")
    _check_dim(phoc, params["ocr.feat.W_phoc"].shape[1], "OCR PHOC")
    feat = ops.add(ops.add(ops.linear(ft, params["ocr.feat.W_ft"]),
                           ops.linear(fr, params["ocr.feat.W_fr"])),
                   ops.linear(phoc, params["ocr.feat.W_phoc"], params["ocr.feat.b"]))
    out = ops.add(_ln(params, "ocr.feat", feat, eps),
                  _ln(params, "ocr.box", ops.linear(box, params["ocr.box.W"], params["ocr.box.b"]), eps))
    if mode == "embed":
        out = ops.add(out, confidence_term(params, conf, eps))
    elif mode == "multiply":
        out = ops.mul(out, conf[..., None])
    elif mode != "none":
        raise EmbeddingError(f"unknown confidence mode {mode!r}")
    if pad is not None:
        out = ops.mul(out, _keep(pad))
    return out


def embed_prev_outputs(params: ParameterStore, slots, x_ocr: Tensor, eps: float = 1e-5) -> Tensor:
    """Decoder inputs for previously emitted tokens.

    ``slots`` is ``[B, T]`` in the concatenated score space: ``n < V`` means
    vocabulary word ``n`` (base vector = row ``n`` of the vocabulary
    projection), ``V + i`` means OCR slot ``i`` (base = ``x_ocr[b, i]``).
    Row ``t`` then gets position ``t`` and source-type embeddings and a LN.
    """
    slots = np.asarray(slots, dtype=np.int64)
    W = params["voc.W"]
    V, N = W.shape[0], x_ocr.shape[-2]
    if slots.size and (slots.min() < 0 or slots.max() >= V + N):
        raise ContractError(f"decoder slot out of range [0, {V + N})")
    T = slots.shape[-1]
    pos_table = params["dec.pos"]
    if T > pos_table.shape[0]:
        raise ContractError(f"{T} decode steps exceed the {pos_table.shape[0]} position embeddings")
    from_ocr = slots >= V
    vocab_rows = ops.take_rows(W, np.where(from_ocr, 0, slots))
    ocr_rows = ops.take_rows(x_ocr, np.where(from_ocr, slots - V, 0))
    base = ops.where(from_ocr[..., None], ocr_rows, vocab_rows)
    pos = ops.take_rows(pos_table, np.arange(T))
    kind = ops.take_rows(params["dec.type"], from_ocr.astype(np.int64))
    return _ln(params, "dec", ops.add(ops.add(base, pos), kind), eps)


def embed_prev_output(params: ParameterStore, slot: int, x_ocr: Tensor, step: int,
                      eps: float = 1e-5) -> Tensor:
    """Single-token form of :func:`embed_prev_outputs` at decode position ``step``."""
    x = x_ocr if x_ocr.ndim == 3 else ops.reshape(x_ocr, (1,) + x_ocr.shape)
    slots = np.ones((1, step + 1), dtype=np.int64)
    slots[0, step] = slot
    return embed_prev_outputs(params, slots, x, eps)[0, step]
