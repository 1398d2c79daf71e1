"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import GradTape, Tensor, backward
from .optim import ParameterStore

# Denominator floor: below this magnitude both gradients are treated as zero
# and the absolute difference is compared instead.
REL_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f: Callable[[ParameterStore], Tensor], params: ParameterStore,
               eps: float = 1e-5, max_coords: int = 64, seed: int = 0,
               floor: float = REL_FLOOR, details: bool = False):
    """Worst relative error between taped and finite-difference gradients.

    At most ``max_coords`` coordinates per tensor are probed, sampled with a
    fixed-seed generator. ``f`` must be deterministic.
    """
    with GradTape() as tape:
        loss = f(params)
    grads = backward(loss, tape)
    rng = np.random.default_rng(seed)
    worst = 0.0
    report = []
    for name, t in params.items():
        g = grads[t].reshape(-1)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = f(params).item()
            flat[c] = orig - eps
            down = f(params).item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * eps)
            err = relative_error(float(g[c]), numeric, floor)
            if err > worst:
                worst = err
            if details:
                report.append((name, int(c), float(g[c]), numeric, err))
    if details:
        return worst, report
    return worst
