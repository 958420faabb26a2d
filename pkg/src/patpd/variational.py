"""Model-based reconstruction: proximal maps, proximal gradient and PDHG.

The objective is ``0.5 * |A x - y|^2 + lam * R(x)`` with ``R`` one of

* ``nonneg``: indicator of ``x >= 0`` (``lam`` is ignored),
* ``l2``: ``|x|^2``,
* ``l1``: ``|x|_1``.

With this scaling the l2 minimiser solves ``(A^T A + 2 lam I) x = A^T y``.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fast_ops import LinearMap, estimate_operator_norm

__all__ = [
    "REGULARIZERS",
    "SolverConfig",
    "VariationalProblem",
    "FixedPointTrace",
    "DivergenceError",
    "StepSizeWarning",
    "prox",
    "dual_prox",
    "regularizer_value",
    "objective",
    "proximal_gradient",
    "pdhg",
    "read_trace_csv",
]

REGULARIZERS = ("nonneg", "l2", "l1")


class DivergenceError(RuntimeError):
    """Iteration judged divergent; the partial trace is attached."""

    def __init__(self, message: str, trace: "FixedPointTrace"):
        super().__init__(message)
        self.trace = trace


class StepSizeWarning(UserWarning):
    pass


@dataclass
class SolverConfig:
    sigma: float = 0.1
    tau: float = 0.1
    theta: float = 1.0
    max_iter: int = 100
    tol: float = 0.0
    memory: int = 5
    anderson_reg: float = 1e-10

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError("sigma and tau must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.max_iter < 1 or self.memory < 1:
            raise ValueError("max_iter and memory must be >= 1")
        if self.tol < 0 or self.anderson_reg < 0:
            raise ValueError("tol and anderson_reg must be nonnegative")


@dataclass
class FixedPointTrace:
    """Per-iteration history. ``primal_res`` is relative, ``dual_res`` absolute."""

    primal_res: list = field(default_factory=list)
    dual_res: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    unstable: bool = False
    notes: list = field(default_factory=list)

    def record(self, primal, dual=float("nan"), obj=float("nan"), wall=float("nan")):
        self.primal_res.append(float(primal))
        self.dual_res.append(float(dual))
        self.objective.append(float(obj))
        self.wall.append(float(wall))

    def __len__(self):
        return len(self.primal_res)

    def extend(self, other: "FixedPointTrace") -> None:
        self.primal_res += other.primal_res
        self.dual_res += other.dual_res
        self.objective += other.objective
        self.wall += other.wall
        self.unstable |= other.unstable
        self.notes += other.notes

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "primal_res", "dual_res", "objective"])
            for i, row in enumerate(zip(self.primal_res, self.dual_res, self.objective), 1):
                w.writerow([i, *(repr(v) for v in row)])


def read_trace_csv(path) -> FixedPointTrace:
    trace = FixedPointTrace()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace.record(float(row["primal_res"]), float(row.get("dual_res", "nan")),
                         float(row.get("objective", "nan")))
    return trace


@dataclass
class VariationalProblem:
    """Data ``y`` with a forward map and the map used in place of its adjoint.

    ``forward`` may be any callable (a corrected, even nonlinear, forward is
    allowed); ``adjoint`` defaults to ``forward.adjoint`` for a LinearMap.
    """

    forward: Callable
    y: np.ndarray
    reg: str = "l2"
    lam: float = 0.0
    adjoint: Callable | None = None

    def __post_init__(self):
        if self.reg not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.reg!r}; expected one of {REGULARIZERS}")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        self.y = np.asarray(getattr(self.y, "values", self.y), dtype=np.float64)
        if self.adjoint is None:
            if not isinstance(self.forward, LinearMap):
                raise ValueError("an adjoint is required unless forward is a LinearMap")
            self.adjoint = self.forward.adjoint
        if isinstance(self.forward, LinearMap) and tuple(self.forward.out_shape) != self.y.shape:
            raise ValueError(f"data shape {self.y.shape} does not match operator {self.forward.out_shape}")


def prox(reg: str, weight: float, x):
    """Proximal map of ``weight * R``."""
    if weight < 0:
        raise ValueError("prox weight must be >= 0")
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if reg == "nonneg":
        return np.maximum(x, 0.0)
    if reg == "l2":
        return x / (1.0 + 2.0 * weight)
    if reg == "l1":
        return np.sign(x) * np.maximum(np.abs(x) - weight, 0.0)
    raise ValueError(f"unknown regularizer {reg!r}")


def dual_prox(q, residual, sigma: float):
    """Dual update for the least-squares fit: ``(q + sigma * residual) / (1 + sigma)``."""
    return (np.asarray(q) + sigma * np.asarray(residual)) / (1.0 + sigma)


def regularizer_value(reg: str, x) -> float:
    if reg == "nonneg":
        return 0.0 if np.all(x >= 0) else float("inf")
    if reg == "l2":
        return float(np.sum(x * x))
    if reg == "l1":
        return float(np.sum(np.abs(x)))
    raise ValueError(f"unknown regularizer {reg!r}")


def objective(prob: VariationalProblem, x) -> float:
    r = prob.forward(x) - prob.y
    return 0.5 * float(np.sum(r * r)) + prob.lam * regularizer_value(prob.reg, x)


def _rel(a, b) -> float:
    n = np.linalg.norm(a)
    return float(np.linalg.norm(a - b) / n) if n > 0 else float(np.linalg.norm(a - b))


def _norm_of(prob: VariationalProblem, op_norm):
    if op_norm is not None:
        return float(op_norm)
    if isinstance(prob.forward, LinearMap):
        return estimate_operator_norm(prob.forward, iters=50)
    return None


def proximal_gradient(prob: VariationalProblem, cfg: SolverConfig, x0, *,
                      step: float | None = None, op_norm: float | None = None):
    """Forward-backward splitting; returns ``(x, trace)``.

    The step defaults to ``1 / L^2``. Five consecutive increases of the
    objective raise :class:`DivergenceError`.
    """
    if step is None:
        L = _norm_of(prob, op_norm)
        if L is None:
            raise ValueError("step or op_norm needed for a non-LinearMap forward")
        step = 1.0 / (L * L)
    x = np.array(getattr(x0, "values", x0), dtype=np.float64)
    trace = FixedPointTrace()
    t0 = time.perf_counter()
    prev = objective(prob, x)
    ups = 0
    for _ in range(cfg.max_iter):
        grad = prob.adjoint(prob.forward(x) - prob.y)
        nxt = prox(prob.reg, prob.lam * step, x - step * grad)
        if not np.all(np.isfinite(nxt)):
            trace.unstable = True
            raise DivergenceError("non-finite iterate", trace)
        res = _rel(nxt, x)
        x = nxt
        obj = objective(prob, x)
        trace.record(res, float("nan"), obj, time.perf_counter() - t0)
        ups = ups + 1 if obj > prev + 1e-12 * max(1.0, abs(prev)) else 0
        prev = obj
        if ups >= 5:
            trace.unstable = True
            raise DivergenceError("objective increased 5 consecutive iterations", trace)
        if res <= cfg.tol:
            break
    return x, trace


def pdhg(prob: VariationalProblem, cfg: SolverConfig, x0, q0=None, *,
         op_norm: float | None = None, callback=None, track_objective: bool = True):
    """Primal-dual hybrid gradient with primal over-relaxation ``cfg.theta``.

    Returns ``(x, q, trace)``. If ``sigma * tau * L^2 >= 1`` a
    :class:`StepSizeWarning` is issued and ``trace.unstable`` is set.
    ``callback(k, x, q)`` sees every iterate.
    """
    x = np.array(getattr(x0, "values", x0), dtype=np.float64)
    q = np.zeros_like(prob.y) if q0 is None else np.array(getattr(q0, "values", q0), dtype=np.float64)
    trace = FixedPointTrace()
    L = _norm_of(prob, op_norm)
    if L is not None:
        coef = cfg.sigma * cfg.tau * L * L
        trace.notes.append(f"step_coefficient={coef!r}")
        if coef >= 1.0:
            warnings.warn(f"sigma*tau*L^2 = {coef:.3g} >= 1, PDHG may not converge",
                          StepSizeWarning, stacklevel=2)
            trace.unstable = True
    xbar = x.copy()
    t0 = time.perf_counter()
    for _ in range(cfg.max_iter):
        q_new = dual_prox(q, prob.forward(xbar) - prob.y, cfg.sigma)
        x_new = prox(prob.reg, prob.lam * cfg.tau, x - cfg.tau * prob.adjoint(q_new))
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(q_new))):
            trace.unstable = True
            raise DivergenceError("non-finite iterate", trace)
        xbar = x_new + cfg.theta * (x_new - x)
        res = _rel(x_new, x)
        dres = float(np.linalg.norm(q_new - q))
        x, q = x_new, q_new
        obj = objective(prob, x) if track_objective else float("nan")
        trace.record(res, dres, obj, time.perf_counter() - t0)
        if callback is not None:
            callback(len(trace), x, q)
        if res <= cfg.tol:
            break
    return x, q, trace
