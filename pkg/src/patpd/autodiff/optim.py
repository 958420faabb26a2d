"""Adam with a cosine-decayed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["OptimState", "cosine_lr", "adam_step"]

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def cosine_lr(base: float, step: int, horizon: int) -> float:
    """``base * 0.5 * (1 + cos(pi * t / horizon))`` with ``t`` clipped to the horizon."""
    if step >= horizon:
        return 0.0
    return base * 0.5 * (1.0 + math.cos(math.pi * step / horizon))


@dataclass
class OptimState:
    base_lr: float = 2e-4
    horizon: int = 2000
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @property
    def lr(self) -> float:
        return cosine_lr(self.base_lr, self.step, self.horizon)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimState):
    """One Adam update. Returns ``(new_params, state)``; inputs are not modified.

    Raises ``FloatingPointError`` (and leaves the state untouched) if any
    gradient is non-finite.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient, step rejected")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = state.lr
    t = state.step + 1
    c1, c2 = 1.0 - BETA1**t, 1.0 - BETA2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g
        out.append(p - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + EPS))
    state.step = t
    return out, state
