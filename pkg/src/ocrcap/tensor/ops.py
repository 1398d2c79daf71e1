"""Differentiable primitives.

Every function accepts Tensors (or anything ``np.asarray`` understands, which
is treated as a constant) and returns a Tensor. Gradients broadcast the numpy
way; :func:`ocrcap.tensor.core.unbroadcast` folds them back.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from .core import ShapeError, Tensor, as_tensor, make_op

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return make_op(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (g / b.data if a.requires_grad else None,
                -g * out / b.data if b.requires_grad else None)

    return make_op(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return make_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return make_op(x * cdf, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make_op(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return make_op(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(np.broadcast_to(a.data, shape), (a,), lambda g: (g,))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(a.data[idx], (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, tensors, bw)


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return make_op(np.where(cond, a.data, b.data), (a, b),
                   lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


def take_rows(table, idx) -> Tensor:
    """Gather rows of ``table``: ``[K,d]`` with any-shaped ``idx``, or
    ``[B,K,d]`` with ``idx`` of shape ``[B,...]`` (per-batch lookup)."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim == 2:
        out = table.data[idx]

        def bw(g):
            full = np.zeros(table.shape)
            np.add.at(full, idx, g)
            return (full,)
    elif table.ndim == 3:
        if idx.shape[0] != table.shape[0]:
            raise ShapeError(f"batch mismatch: table {table.shape}, index {idx.shape}")
        bidx = np.arange(table.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
        out = table.data[bidx, idx]

        def bw(g):
            full = np.zeros(table.shape)
            np.add.at(full, (np.broadcast_to(bidx, idx.shape), idx), g)
            return (full,)
    else:
        raise ShapeError(f"take_rows needs a 2-D or 3-D table, got {table.shape}")
    return make_op(out, (table,), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matmul for operands with ndim >= 2 (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), bw)


def linear(x, W, b=None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``; ``W`` is ``[out, in]``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    parents = [x, W]
    out = x.data @ W.data.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
        out = out + b.data
        parents.append(b)

    def bw(g):
        g2 = g.reshape(-1, W.shape[0])
        gx = g @ W.data if x.requires_grad else None
        gW = g2.T @ x.data.reshape(-1, W.shape[1]) if W.requires_grad else None
        grads = [gx, gW]
        if b is not None:
            grads.append(g2.sum(axis=0) if b.requires_grad else None)
        return tuple(grads)

    return make_op(out, parents, bw)


# ---------------------------------------------------------------------------
# normalisation and probability
# ---------------------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm over an empty last axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} vs d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        return gx, gg, gb

    return make_op(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op(s, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (x,), bw)


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted mean softmax cross-entropy over the last axis.

    ``targets`` are integer class ids shaped like ``logits.shape[:-1]``;
    positions with weight 0 drop out. An all-zero weight vector yields 0.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} vs logits {logits.shape}")
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    sum_e = e.sum(axis=-1, keepdims=True)
    logp = z - np.log(sum_e)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    total = w.sum()
    scale = 1.0 / total if total > 0 else 0.0
    loss = -(w * picked).sum() * scale

    def bw(g):
        p = e / sum_e
        np.put_along_axis(p, targets[..., None],
                          np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (g * scale * w[..., None] * p,)

    return make_op(np.asarray(loss), (logits,), bw)


def binary_cross_entropy_with_logits(logits, labels, weights=None) -> Tensor:
    """Sum of per-element sigmoid BCE, averaged over weighted positions.

    ``weights`` index ``logits.shape[:-1]`` so one caption position counts once
    regardless of how many slots it labels.
    """
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    x = logits.data
    w = np.ones(x.shape[:-1]) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    scale = 1.0 / total if total > 0 else 0.0
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    loss = (per.sum(axis=-1) * w).sum() * scale

    def bw(g):
        return (g * scale * w[..., None] * (expit(x) - y),)

    return make_op(np.asarray(loss), (logits,), bw)
