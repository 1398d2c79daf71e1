"""Composite layers built from the primitives in :mod:`ops`."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import ops
from .core import NEG_SENTINEL, ShapeError, Tensor, as_tensor


class ConfigError(ValueError):
    """Raised for inconsistent layer hyper-parameters."""


def multi_head_attention(q, k, v, mask, heads: int, weights: Mapping[str, Tensor],
                         return_weights: bool = False):
    """Scaled dot-product attention with ``heads`` heads.

    ``q``, ``k``, ``v`` are ``[..., T, d]``; ``mask`` is an additive
    ``[..., T, T]`` array whose entries are 0 or :data:`NEG_SENTINEL`.
    ``weights`` holds ``Wq, bq, Wk, Wv, bv, Wo, bo`` and optionally ``bk``
    (a key bias shifts every score of a query equally, so softmax cancels it).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if heads <= 0 or d % heads:
        raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[-1] != d:
        raise ShapeError(f"attention operand shapes differ: {q.shape}, {k.shape}, {v.shape}")
    dh = d // heads
    lead = q.shape[:-2]
    tq, tk = q.shape[-2], k.shape[-2]

    def split(x, t):
        # [..., T, d] -> [..., H, T, dh]
        x = ops.reshape(x, lead + (t, heads, dh))
        return ops.swapaxes(x, -2, -3)

    qh = split(ops.linear(q, weights["Wq"], weights["bq"]), tq)
    kh = split(ops.linear(k, weights["Wk"], weights.get("bk")), tk)
    vh = split(ops.linear(v, weights["Wv"], weights["bv"]), tk)
    scores = ops.mul(ops.matmul(qh, ops.swapaxes(kh, -1, -2)), 1.0 / math.sqrt(dh))
    if mask is not None:
        m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
        # insert the head axis so the mask broadcasts over heads
        scores = ops.add(scores, np.expand_dims(m, -3))
    probs = ops.softmax(scores, axis=-1)
    ctx = ops.matmul(probs, vh)
    ctx = ops.reshape(ops.swapaxes(ctx, -2, -3), lead + (tq, d))
    out = ops.linear(ctx, weights["Wo"], weights["bo"])
    if return_weights:
        return out, probs
    return out


def causal_mask(t: int) -> np.ndarray:
    m = np.zeros((t, t))
    m[np.triu_indices(t, k=1)] = NEG_SENTINEL
    return m


def feed_forward(x, W1, b1, W2, b2) -> Tensor:
    return ops.linear(ops.gelu(ops.linear(x, W1, b1)), W2, b2)
