"""Parameter storage and the Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .core import ContractError, GradMap, Tensor


class ParameterStore:
    """Insertion-ordered map from parameter name to trainable Tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def get(self, name: str, default=None):
        return self._params.get(name, default)

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def grads_by_name(self, grads: GradMap) -> dict[str, np.ndarray]:
        return {name: grads[t] for name, t in self._params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ContractError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParameterStore":
        store = cls()
        for name, arr in arrays.items():
            store.add(name, np.array(arr, dtype=np.float64))
        return store


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParameterStore, grads: Mapping[str, np.ndarray], lr: float,
              betas: tuple = (0.9, 0.999), eps: float = 1e-8,
              state: AdamState | None = None) -> AdamState:
    """Apply one bias-corrected Adam update in place and return the new state."""
    if state is None:
        state = AdamState()
    missing = [name for name in store if name not in grads]
    if missing:
        raise ContractError(f"no gradient for registered parameters: {missing}")
    b1, b2 = betas
    step = state.step + 1
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in store.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step = step
    return state
