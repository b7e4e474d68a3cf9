"""Adam optimizer over named parameter collections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .nn import Parameter

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update; gradient accumulators are zeroed."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(bc2)
        denom += state.eps
        update = m / denom
        update *= state.lr / bc1
        p.value.data -= update.astype(p.data.dtype, copy=False)
        p.zero_grad()
