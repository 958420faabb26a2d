"""Learned primal-dual reconstruction with a corrected fast forward model.

One primal-dual step maps ``(x, q)`` to

    q+ = (q + sigma * (F(Ax, y) - y)) / (1 + sigma)
    x+ = G(x - tau * Ainv q+, Ainv q+)

where ``A`` is the fast forward map, ``Ainv`` the fast inverse, ``F`` the
data-space correction net and ``G`` the image-space update net. Both nets
are residual on their first input channel, so untrained nets give
``F = Ax`` and ``G = x - tau * Ainv q+``.

MC-PD unrolls a fixed number of these steps. PD-DEQ looks for the fixed
point of the step, accelerated by Anderson mixing, and is trained through
implicit differentiation of the fixed-point condition.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..autodiff.nets import NetParams, forward_net, init_contractive_net, init_net
from ..autodiff.tensor import Tensor, grad, linear, stack
from ..fast_ops import LinearMap, build_plan, estimate_operator_norm, forward_map, inverse_map
from ..variational import DivergenceError, FixedPointTrace
from .anderson import AndersonState, anderson_update

__all__ = [
    "Operators",
    "PDNets",
    "PDConfig",
    "ContractionError",
    "make_operators",
    "default_steps",
    "init_pd_nets",
    "init_postproc_net",
    "pd_step",
    "pd_step_tape",
    "initial_iterate",
    "mcpd_reconstruct",
    "pddeq_forward",
    "pddeq_backward",
    "hybrid_reconstruct",
    "postprocess_reconstruct",
]


class ContractionError(RuntimeError):
    """The implicit adjoint iteration did not converge."""


@dataclass(frozen=True)
class Operators:
    """Fast forward ``fwd`` (image -> data) and fast inverse ``inv`` (data -> image)."""

    fwd: LinearMap
    inv: LinearMap
    fwd_norm: float

    @property
    def image_shape(self):
        return tuple(self.fwd.in_shape)

    @property
    def data_shape(self):
        return tuple(self.fwd.out_shape)


def make_operators(grid_or_plan, *, fwd: LinearMap | None = None, inv: LinearMap | None = None,
                   norm_iters: int = 50) -> Operators:
    plan = grid_or_plan if hasattr(grid_or_plan, "k1") else build_plan(grid_or_plan)
    fwd = fwd or forward_map(plan)
    inv = inv or inverse_map(plan)
    return Operators(fwd, inv, estimate_operator_norm(fwd, iters=norm_iters))


def default_steps(ops: Operators, factor: float = 10.0) -> float:
    """``sigma = tau = 1 / (factor * |A|)``."""
    return 1.0 / (factor * ops.fwd_norm)


@dataclass
class PDNets:
    """Dual correction ``dual`` (channels: A x, y) and primal update ``primal``
    (channels: x - tau Ainv q, Ainv q)."""

    dual: NetParams
    primal: NetParams

    def arrays(self) -> list[np.ndarray]:
        return self.dual.arrays() + self.primal.arrays()

    def set_arrays(self, arrays) -> None:
        arrays = list(arrays)
        n = len(self.dual.arrays())
        self.dual.set_arrays(arrays[:n])
        self.primal.set_arrays(arrays[n:])

    def copy(self) -> "PDNets":
        return PDNets(self.dual.copy(), self.primal.copy())

    def as_list(self) -> list[NetParams]:
        return [self.dual, self.primal]


@dataclass
class PDConfig:
    sigma: float
    tau: float
    iters: int = 10
    memory: int = 5
    anderson_reg: float = 1e-10
    tol: float = 0.0
    input_scale: float = 4.0
    implicit_max_iter: int = 100
    implicit_tol: float = 1e-4
    mixing: str = "joint"  # Anderson on the stacked (x, q) or "separate" per variable

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError("sigma and tau must be positive")
        if self.mixing not in ("joint", "separate"):
            raise ValueError(f"mixing must be 'joint' or 'separate', got {self.mixing!r}")
        if self.iters < 0 or self.memory < 1:
            raise ValueError("iters must be >= 0 and memory >= 1")


def init_pd_nets(hidden: int = 16, n_layers: int = 3, seed: int = 0, *,
                 spectral_norm: bool = False, sn_shape=None, **kw) -> PDNets:
    """Fresh dual and primal nets.

    With ``spectral_norm`` the primal net is the contractive variant from
    :func:`init_contractive_net`; the dual correction is never constrained.
    """
    dual = init_net(2, hidden, n_layers, seed=seed, residual_channel=0, **kw)
    if spectral_norm:
        primal = init_contractive_net(2, hidden, n_layers, seed=seed + 1, sn_shape=sn_shape,
                                      slope=kw.get("slope", 0.2))
    else:
        primal = init_net(2, hidden, n_layers, seed=seed + 1, residual_channel=0, **kw)
    return PDNets(dual, primal)


def init_postproc_net(hidden: int = 16, n_layers: int = 3, seed: int = 0, **kw) -> NetParams:
    kw.pop("spectral_norm", None)
    kw.pop("sn_shape", None)
    return init_net(1, hidden, n_layers, seed=seed, residual_channel=0, **kw)


def _split_leaves(nets: PDNets, leaves):
    if leaves is None:
        return None, None
    n = len(nets.dual.arrays())
    return list(leaves[:n]), list(leaves[n:])


def pd_step_tape(x, q, y, nets: PDNets, ops: Operators, sigma: float, tau: float, leaves=None):
    """One step on the autodiff tape; ``x``, ``q`` may be tensors."""
    ld, lp = _split_leaves(nets, leaves)
    y = y if isinstance(y, Tensor) else Tensor(y)
    ax = linear(ops.fwd, x)
    fx = forward_net(nets.dual, stack([ax, y]), ld)
    q_new = (q + sigma * (fx - y)) * (1.0 / (1.0 + sigma))
    if not np.all(np.isfinite(q_new.value)):
        raise FloatingPointError("non-finite dual iterate in primal-dual step")
    aq = linear(ops.inv, q_new)
    x_new = forward_net(nets.primal, stack([x - tau * aq, aq]), lp)
    if not np.all(np.isfinite(x_new.value)):
        raise FloatingPointError("non-finite primal iterate in primal-dual step")
    return x_new, q_new


def pd_step(x, q, y, nets: PDNets, ops: Operators, sigma: float, tau: float):
    """One primal-dual step on plain arrays; returns ``(x+, q+)``."""
    xn, qn = pd_step_tape(Tensor(np.asarray(x, dtype=np.float64)),
                          Tensor(np.asarray(q, dtype=np.float64)),
                          np.asarray(y, dtype=np.float64), nets, ops, sigma, tau)
    return xn.value, qn.value


def initial_iterate(y, ops: Operators, input_scale: float = 4.0):
    """``x0 = input_scale * Ainv y`` and ``q0 = 0``."""
    y = np.asarray(getattr(y, "values", y), dtype=np.float64)
    return input_scale * ops.inv(y), np.zeros_like(y)


def _rel(new, old) -> float:
    n = np.linalg.norm(new)
    d = np.linalg.norm(new - old)
    return float(d / n) if n > 0 else float(d)


def mcpd_reconstruct(y, nets: PDNets, ops: Operators, cfg: PDConfig, *, x0=None, q0=None,
                     iters: int | None = None):
    """Unrolled MC-PD; returns ``(x, q, trace)``.

    ``trace.primal_res[k]`` is ``|x_{k+1} - x_k| / |x_{k+1}|``.
    """
    y = np.asarray(getattr(y, "values", y), dtype=np.float64)
    if x0 is None:
        x0, q0 = initial_iterate(y, ops, cfg.input_scale)
    x = np.asarray(x0, dtype=np.float64)
    q = np.zeros_like(y) if q0 is None else np.asarray(q0, dtype=np.float64)
    trace = FixedPointTrace()
    t0 = time.perf_counter()
    for _ in range(cfg.iters if iters is None else iters):
        xn, qn = pd_step(x, q, y, nets, ops, cfg.sigma, cfg.tau)
        trace.record(_rel(xn, x), np.linalg.norm(qn - q), float("nan"), time.perf_counter() - t0)
        x, q = xn, qn
    return x, q, trace


def pddeq_forward(y, nets: PDNets, ops: Operators, cfg: PDConfig, x0=None, q0=None, *,
                  iters: int | None = None, accelerate: bool = True):
    """Fixed-point iteration of the primal-dual step with Anderson mixing.

    With ``cfg.mixing == "joint"`` one set of mixing coefficients is fitted
    to the stacked residual of ``(x, q)``; ``"separate"`` fits one set per
    variable. Separate coefficients decouple the two halves of the step and
    can stall or diverge on maps where joint mixing converges.

    Runs ``iters`` (default ``cfg.iters``) evaluations of the step or stops
    once the relative primal residual ``|PD_x(z_k) - x_k| / |PD_x(z_k)|``
    drops to ``cfg.tol``. Returns ``(x, q, trace)``; a non-finite iterate
    raises :class:`DivergenceError` carrying the partial trace.
    """
    y = np.asarray(getattr(y, "values", y), dtype=np.float64)
    if x0 is None:
        x0, q0 = initial_iterate(y, ops, cfg.input_scale)
    x = np.asarray(x0, dtype=np.float64)
    q = np.zeros_like(y) if q0 is None else np.asarray(q0, dtype=np.float64)
    m = cfg.memory if accelerate else 1
    joint = AndersonState(m, cfg.anderson_reg)
    sx = AndersonState(m, cfg.anderson_reg)
    sq = AndersonState(m, cfg.anderson_reg)
    trace = FixedPointTrace()
    t0 = time.perf_counter()
    for _ in range(cfg.iters if iters is None else iters):
        try:
            fx, fq = pd_step(x, q, y, nets, ops, cfg.sigma, cfg.tau)
        except FloatingPointError as exc:
            trace.unstable = True
            raise DivergenceError(str(exc), trace) from exc
        r = _rel(fx, x)
        trace.record(r, np.linalg.norm(fq - q), float("nan"), time.perf_counter() - t0)
        if r > 1e6:
            trace.unstable = True
        if cfg.mixing == "joint":
            z = anderson_update(joint, np.concatenate([x.ravel(), q.ravel()]),
                                np.concatenate([fx.ravel(), fq.ravel()]))
            x, q = z[:x.size].reshape(x.shape), z[x.size:].reshape(q.shape)
        else:
            x = anderson_update(sx, x, fx)
            q = anderson_update(sq, q, fq)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            trace.unstable = True
            raise DivergenceError("non-finite iterate", trace)
        if r <= cfg.tol:
            break
    return x, q, trace


def pddeq_backward(x_star, q_star, y, target, nets: PDNets, ops: Operators, cfg: PDConfig, *,
                   jacobian_free: bool = False, reduction: str = "sum", memory: int = 5):
    """Gradient of ``|x* - target|^2`` (or its mean) with respect to all net weights.

    The adjoint ``w`` of the joint fixed point ``z* = PD(z*)``, ``z = (x, q)``,
    solves ``w = g + J_z^T w`` with ``g = (dl/dx*, 0)``. It is found by an
    Anderson-mixed fixed-point iteration on vector-Jacobian products (a
    linear problem, so mixing converges far faster than the plain Neumann
    series). ``jacobian_free`` takes ``w = g``. The result is ``J_zeta^T w``.

    Returns ``(loss, grads)``; grads follow ``nets.arrays()``.
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    target = np.asarray(getattr(target, "values", target), dtype=np.float64)
    diff = x_star - target
    if reduction == "sum":
        loss, gx = float(np.sum(diff * diff)), 2.0 * diff
    elif reduction == "mean":
        loss, gx = float(np.mean(diff * diff)), 2.0 * diff / diff.size
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    xt = Tensor(x_star, requires_grad=True)
    qt = Tensor(q_star, requires_grad=True)
    leaves = [Tensor(a, requires_grad=True) for a in nets.arrays()]
    out_x, out_q = pd_step_tape(xt, qt, np.asarray(y, dtype=np.float64), nets, ops,
                                cfg.sigma, cfg.tau, leaves)
    nx = x_star.size
    g = np.concatenate([gx.ravel(), np.zeros(q_star.size)])

    if jacobian_free:
        w = g
    else:
        def fmap(wv):
            jx, jq = grad([out_x, out_q], [wv[:nx].reshape(x_star.shape),
                                           wv[nx:].reshape(q_star.shape)], [xt, qt])
            return g + np.concatenate([jx.ravel(), jq.ravel()])

        w = g.copy()
        state = AndersonState(memory, cfg.anderson_reg)
        gnorm = np.linalg.norm(g)
        for _ in range(cfg.implicit_max_iter):
            fw = fmap(w)
            if np.linalg.norm(fw - w) <= cfg.implicit_tol * max(np.linalg.norm(fw), gnorm):
                w = fw
                break
            w = anderson_update(state, w, fw)
        else:
            raise ContractionError(
                "implicit adjoint solve did not reach tolerance; the step map is probably "
                "not contractive, try smaller tau and sigma"
            )
    grads = grad([out_x, out_q], [w[:nx].reshape(x_star.shape), w[nx:].reshape(q_star.shape)],
                 leaves)
    return loss, grads


def hybrid_reconstruct(y, nets_unrolled: PDNets, nets_deq: PDNets, ops: Operators, cfg: PDConfig,
                       split=(5, 5), *, accelerate: bool = True):
    """MC-PD for ``split[0]`` steps, then PD-DEQ for ``split[1]`` from that state.

    Returns ``(x, q, (trace_unrolled, trace_deq))``.
    """
    k1, k2 = split
    x, q, t1 = mcpd_reconstruct(y, nets_unrolled, ops, cfg, iters=k1)
    if k2 == 0:
        return x, q, (t1, FixedPointTrace())
    x, q, t2 = pddeq_forward(y, nets_deq, ops, cfg, x, q, iters=k2, accelerate=accelerate)
    return x, q, (t1, t2)


def postprocess_reconstruct(y, net: NetParams, ops: Operators, input_scale: float = 4.0):
    """Single-channel net applied to ``input_scale * Ainv y``."""
    y = np.asarray(getattr(y, "values", y), dtype=np.float64)
    if y.shape != ops.data_shape:
        raise ValueError(f"data shape {y.shape} does not match operators {ops.data_shape}")
    base = input_scale * ops.inv(y)
    return forward_net(net, Tensor(base[None])).value
