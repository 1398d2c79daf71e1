"""Multimodal transformer over [objects | OCR tokens | decode steps]."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ModelConfig
from .tensor import NEG_SENTINEL, ContractError, ParameterStore, Tensor, ops
from .tensor.nn import feed_forward, multi_head_attention

# no key bias: it adds the same amount to every score of a query
ATTN_KEYS = ("Wq", "bq", "Wk", "Wv", "bv", "Wo", "bo")


@dataclass
class MmtOutput:
    z_obj: Tensor
    z_ocr: Tensor
    z_dec: Tensor
    attention: Optional[list] = None  # per layer [..., H, S, S] probabilities when requested


def build_attention_mask(M: int, N: int, T: int, pad_flags=None) -> np.ndarray:
    """Additive ``[..., S, S]`` mask with ``S = M + N + T``.

    ``pad_flags`` has shape ``[..., M + N]`` (objects first). Object and OCR
    rows see every non-padded object/OCR key and no decode key. Decode row
    ``t`` also sees decode keys ``<= t``. A row left with nothing visible
    (a scene with no objects and no OCR) falls back to attending to itself,
    which keeps its softmax away from the decode block.
    """
    S = M + N + T
    pad = np.zeros(M + N, dtype=bool) if pad_flags is None else np.asarray(pad_flags, dtype=bool)
    if pad.shape[-1] != M + N:
        raise ContractError(f"pad_flags cover {pad.shape[-1]} slots, expected {M + N}")
    lead = pad.shape[:-1]
    visible = np.zeros(lead + (S, S), dtype=bool)
    key_ok = ~pad[..., None, :]
    visible[..., :, : M + N] = key_ok
    visible[..., M + N:, M + N:] = np.tril(np.ones((T, T), dtype=bool))
    empty = ~visible.any(axis=-1)
    if empty.any():
        diag = np.broadcast_to(np.eye(S, dtype=bool), visible.shape)
        visible |= empty[..., None] & diag
    return np.where(visible, 0.0, NEG_SENTINEL)


def _layer_weights(params: ParameterStore, layer: int) -> dict:
    p = f"mmt.{layer}."
    return {k: params[p + "attn." + k] for k in ATTN_KEYS}


def mmt_forward(x_obj, x_ocr, x_dec, cfg: ModelConfig, params: ParameterStore,
                obj_pad=None, ocr_pad=None, return_attention: bool = False) -> MmtOutput:
    """Post-norm encoder stack over the concatenated entity sequence.

    Inputs are ``[..., M, d]``, ``[..., N, d]``, ``[..., T, d]`` with shared
    leading dims; pads are ``[..., M]`` and ``[..., N]`` booleans.
    """
    M, N, T = x_obj.shape[-2], x_ocr.shape[-2], x_dec.shape[-2]
    if T > cfg.max_steps:
        raise ContractError(f"sequence of {M + N + T} exceeds M+N+max_steps = {M + N + cfg.max_steps}")
    lead = x_obj.shape[:-2]
    if obj_pad is None:
        obj_pad = np.zeros(lead + (M,), dtype=bool)
    if ocr_pad is None:
        ocr_pad = np.zeros(lead + (N,), dtype=bool)
    mask = build_attention_mask(M, N, T, np.concatenate([obj_pad, ocr_pad], axis=-1))
    h = ops.concat([x_obj, x_ocr, x_dec], axis=-2)
    attn = []
    for layer in range(cfg.layers):
        p = f"mmt.{layer}."
        out = multi_head_attention(h, h, h, mask, cfg.heads, _layer_weights(params, layer),
                                   return_weights=return_attention)
        if return_attention:
            out, probs = out
            attn.append(probs.data)
        h = ops.layer_norm(ops.add(h, out), params[p + "ln1.g"], params[p + "ln1.b"], cfg.ln_eps)
        ff = feed_forward(h, params[p + "ffn.W1"], params[p + "ffn.b1"],
                          params[p + "ffn.W2"], params[p + "ffn.b2"])
        h = ops.layer_norm(ops.add(h, ff), params[p + "ln2.g"], params[p + "ln2.b"], cfg.ln_eps)
    return MmtOutput(h[..., :M, :], h[..., M:M + N, :], h[..., M + N:, :],
                     attn if return_attention else None)
