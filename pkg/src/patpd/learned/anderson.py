"""Anderson mixing for fixed-point iterations ``z = f(z)``."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = ["AndersonState", "anderson_coefficients", "anderson_update", "anderson_solve"]


def anderson_coefficients(H: np.ndarray, reg: float = 1e-10) -> np.ndarray:
    """Minimise ``|H a|`` subject to ``sum(a) = 1``.

    ``H`` holds one vectorised residual per column. The Gram matrix gets
    ``reg * trace(H^T H) / m`` on its diagonal and the bordered (m+1) system
    is solved directly, followed by one iterated-Tikhonov refinement step
    (same regularised matrix), which shrinks the regularisation bias from
    O(reg) to O(reg^2) without giving up the conditioning.
    """
    m = H.shape[1]
    if m == 1:
        return np.ones(1)
    G = H.T @ H
    tr = np.trace(G)
    if tr == 0:
        a = np.zeros(m)
        a[0] = 1.0
        return a
    kkt = np.zeros((m + 1, m + 1))
    lam = reg * tr / m
    kkt[:m, :m] = G + lam * np.eye(m)
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
        if lam > 0:
            corr = np.zeros(m + 1)
            corr[:m] = lam * sol[:m]
            sol = sol + np.linalg.solve(kkt, corr)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Anderson system singular after regularisation") from exc
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("Anderson system singular after regularisation")
    return sol[:m]


@dataclass
class AndersonState:
    """Ring buffers of the last ``memory`` iterates and their images under ``f``.

    Index 0 of the buffers (and of ``coefficients``) is the newest entry.
    """

    memory: int = 5
    reg: float = 1e-10
    iterates: deque = field(default_factory=deque)
    outputs: deque = field(default_factory=deque)
    coefficients: np.ndarray = field(default_factory=lambda: np.ones(0))

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")

    def __len__(self):
        return len(self.iterates)

    @property
    def residual_matrix(self) -> np.ndarray:
        return np.stack([np.ravel(f - z) for z, f in zip(self.iterates, self.outputs)], axis=1)


def anderson_update(state: AndersonState, z, fz) -> np.ndarray:
    """Push the pair ``(z, f(z))`` and return the mixed next iterate."""
    state.iterates.appendleft(np.asarray(z, dtype=np.float64))
    state.outputs.appendleft(np.asarray(fz, dtype=np.float64))
    while len(state.iterates) > state.memory:
        state.iterates.pop()
        state.outputs.pop()
    if len(state.iterates) == 1:
        state.coefficients = np.ones(1)
        return state.outputs[0].copy()
    a = anderson_coefficients(state.residual_matrix, state.reg)
    state.coefficients = a
    out = np.zeros_like(state.outputs[0])
    for ai, fi in zip(a, state.outputs):
        out += ai * fi
    return out


def anderson_solve(f, z0, *, memory: int = 5, reg: float = 1e-10, max_iter: int = 100,
                   tol: float = 0.0, accelerate: bool = True):
    """Iterate ``z <- f(z)`` (mixed if ``accelerate``); returns ``(z, residuals)``.

    ``residuals[k]`` is ``|f(z_k) - z_k|`` for the k-th evaluated iterate.
    Stops once that drops to ``tol`` or below.
    """
    z = np.array(z0, dtype=np.float64)
    state = AndersonState(memory if accelerate else 1, reg)
    res = []
    for _ in range(max_iter):
        fz = np.asarray(f(z), dtype=np.float64)
        res.append(float(np.linalg.norm(fz - z)))
        if res[-1] <= tol:
            return z, res
        z = anderson_update(state, z, fz)
    return z, res
