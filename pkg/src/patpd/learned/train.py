"""Supervised training of the post-processing, MC-PD, PD-DEQ and hybrid models."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from ..autodiff.nets import NetParams, forward_net, refresh_spectral
from ..autodiff.optim import OptimState, adam_step
from ..autodiff.tensor import Tensor, backward, mse
from ..variational import DivergenceError
from .pd import (
    ContractionError,
    Operators,
    PDConfig,
    PDNets,
    default_steps,
    hybrid_reconstruct,
    init_pd_nets,
    init_postproc_net,
    initial_iterate,
    mcpd_reconstruct,
    pd_step_tape,
    pddeq_backward,
    pddeq_forward,
    postprocess_reconstruct,
)

__all__ = ["METHODS", "TrainConfig", "TrainResult", "TrainingAborted", "train", "reconstruct",
           "pd_config"]

METHODS = ("postproc", "mcpd", "pddeq", "hybrid")


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; ``nets`` holds the last finite weights."""

    def __init__(self, message, nets, log):
        super().__init__(message)
        self.nets = nets
        self.log = log


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 2e-4
    iters: int = 10
    split: tuple = (5, 5)
    hidden: int = 16
    n_layers: int = 3
    spectral_norm: bool = False
    input_scale: float = 4.0
    step_factor: float = 10.0
    sigma: float | None = None
    tau: float | None = None
    memory: int = 5
    anderson_reg: float = 1e-10
    implicit_max_iter: int = 100
    implicit_tol: float = 1e-4
    jacobian_free: bool = False
    mixing: str = "joint"
    warmup_frac: float = 0.1
    val_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.iters < 1:
            raise ValueError("steps and iters must be positive")
        self.split = tuple(int(s) for s in self.split)
        if sum(self.split) != self.iters or min(self.split) < 0:
            raise ValueError(f"hybrid split {self.split} must be nonnegative and sum to {self.iters}")


@dataclass
class TrainResult:
    method: str
    nets: list  # NetParams: [post] | [dual, primal] | [dual1, primal1, dual2, primal2]
    log: list = field(default_factory=list)  # rows: step, lr, train_loss, val_psnr
    losses: list = field(default_factory=list)
    fallbacks: int = 0  # implicit solves replaced by the Jacobian-free gradient

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "train_loss", "val_psnr"])
            for row in self.log:
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])

    def pd_nets(self, which: int = 0) -> PDNets:
        return PDNets(self.nets[2 * which], self.nets[2 * which + 1])


def pd_config(cfg: TrainConfig, ops: Operators, iters: int | None = None) -> PDConfig:
    step = default_steps(ops, cfg.step_factor)
    return PDConfig(
        sigma=cfg.sigma or step, tau=cfg.tau or step,
        iters=cfg.iters if iters is None else iters, memory=cfg.memory,
        anderson_reg=cfg.anderson_reg, input_scale=cfg.input_scale,
        implicit_max_iter=cfg.implicit_max_iter, implicit_tol=cfg.implicit_tol,
        mixing=cfg.mixing,
    )


def _psnr(x, ref, rng_=1.0):
    m = np.mean((x - ref) ** 2)
    return float("inf") if m == 0 else 10 * np.log10(rng_**2 / m)


def reconstruct(method: str, nets: list, y, ops: Operators, pcfg: PDConfig, split=(5, 5),
                iters: int | None = None):
    """Reconstruct with a trained net list as stored in :class:`TrainResult`."""
    if method == "postproc":
        return postprocess_reconstruct(y, nets[0], ops, pcfg.input_scale)
    if method == "mcpd":
        return mcpd_reconstruct(y, PDNets(*nets[:2]), ops, pcfg, iters=iters)[0]
    if method == "pddeq":
        return pddeq_forward(y, PDNets(*nets[:2]), ops, pcfg, iters=iters)[0]
    if method == "hybrid":
        return hybrid_reconstruct(y, PDNets(*nets[:2]), PDNets(*nets[2:4]), ops, pcfg, split)[0]
    raise ValueError(f"unknown method {method!r}")


def _sn_refresh(nets: list[NetParams], shape):
    for p in nets:
        if p.spectral_norm:
            refresh_spectral(p, p.sn_shape or shape)


def _unrolled_loss(nets: PDNets, y, target, ops, pcfg, iters, x0=None, q0=None):
    leaves = [Tensor(a, requires_grad=True) for a in nets.arrays()]
    if x0 is None:
        x0, q0 = initial_iterate(y, ops, pcfg.input_scale)
    x, q = Tensor(x0), Tensor(q0)
    for _ in range(iters):
        x, q = pd_step_tape(x, q, y, nets, ops, pcfg.sigma, pcfg.tau, leaves)
    loss = mse(x, target)
    backward(loss)
    return float(loss.value), [t.grad for t in leaves]


def _postproc_loss(net: NetParams, y, target, ops, pcfg):
    leaves = [Tensor(a, requires_grad=True) for a in net.arrays()]
    base = pcfg.input_scale * ops.inv(y)
    loss = mse(forward_net(net, Tensor(base[None]), leaves), target)
    backward(loss)
    return float(loss.value), [t.grad for t in leaves]


def _deq_loss(nets: PDNets, y, target, ops, pcfg, accelerate, jacobian_free, x0=None, q0=None,
              iters=None):
    x, q, _ = pddeq_forward(y, nets, ops, pcfg, x0, q0, iters=iters, accelerate=accelerate)
    try:
        loss, grads = pddeq_backward(x, q, y, target, nets, ops, pcfg,
                                     jacobian_free=jacobian_free, reduction="mean")
        fallback = False
    except ContractionError:
        loss, grads = pddeq_backward(x, q, y, target, nets, ops, pcfg,
                                     jacobian_free=True, reduction="mean")
        fallback = True
    return loss, grads, fallback


def train(method: str, x_train, y_train, ops: Operators, cfg: TrainConfig, *,
          x_val=None, y_val=None, init=None, progress=None) -> TrainResult:
    """Train ``method`` on image/data pairs with Adam, one sample per step.

    MC-PD backpropagates through all unrolled steps. PD-DEQ uses implicit
    differentiation (plain, unaccelerated iterations and Jacobian-free
    gradients during the first ``warmup_frac`` of steps); an implicit solve
    that fails to converge falls back to the Jacobian-free gradient and is
    counted in ``fallbacks``. The hybrid alternates one update of the
    unrolled nets with one update of the equilibrium nets.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if len(x_train) == 0 or len(x_train) != len(y_train):
        raise ValueError("training set must be nonempty with matching images and data")
    shape = x_train.shape[1:]
    sn_shape = tuple(shape) if cfg.spectral_norm else None
    kw = dict(hidden=cfg.hidden, n_layers=cfg.n_layers, spectral_norm=cfg.spectral_norm,
              sn_shape=sn_shape)
    if init is not None:
        nets = [p.copy() for p in init]
    elif method == "postproc":
        nets = [init_postproc_net(seed=cfg.seed, **kw)]
    elif method == "hybrid":
        # only the equilibrium half needs a contractive primal net
        nets = init_pd_nets(seed=cfg.seed, **{**kw, "spectral_norm": False}).as_list()
        nets += init_pd_nets(seed=cfg.seed + 2, **kw).as_list()
    else:
        nets = init_pd_nets(seed=cfg.seed, **kw).as_list()

    pcfg = pd_config(cfg, ops)
    rng = np.random.default_rng(cfg.seed)
    groups = [[0]] if method == "postproc" else [[0, 1]] if method != "hybrid" else [[0, 1], [2, 3]]
    states = [OptimState(cfg.lr, cfg.steps) for _ in groups]
    result = TrainResult(method, nets)
    warm = int(round(cfg.warmup_frac * cfg.steps))
    last_good = [p.copy() for p in nets]

    def val_psnr():
        if x_val is None or len(x_val) == 0:
            return float("nan")
        vals = [_psnr(reconstruct(method, nets, yv, ops, pcfg, cfg.split), xv)
                for xv, yv in zip(x_val, y_val)]
        return float(np.mean(vals))

    def arrays_of(group):
        return [a for i in group for a in nets[i].arrays()]

    def apply(group, new):
        k = 0
        for i in group:
            n = len(nets[i].arrays())
            nets[i].set_arrays(new[k:k + n])
            k += n

    t0 = time.perf_counter()
    for step in range(cfg.steps):
        j = int(rng.integers(len(x_train)))
        x, y = x_train[j], y_train[j]
        _sn_refresh(nets, shape)
        lr_now = states[0].lr
        updates = []
        try:
            if method == "postproc":
                loss, g = _postproc_loss(nets[0], y, x, ops, pcfg)
                updates.append((0, g))
            elif method == "mcpd":
                loss, g = _unrolled_loss(PDNets(*nets[:2]), y, x, ops, pcfg, cfg.iters)
                updates.append((0, g))
            elif method == "pddeq":
                in_warmup = step < warm
                loss, g, fb = _deq_loss(PDNets(*nets[:2]), y, x, ops, pcfg, not in_warmup,
                                        cfg.jacobian_free or in_warmup)
                result.fallbacks += fb
                updates.append((0, g))
            else:
                k1, k2 = cfg.split
                pd1, pd2 = PDNets(*nets[:2]), PDNets(*nets[2:4])
                loss1, g1 = _unrolled_loss(pd1, y, x, ops, pcfg, k1)
                updates.append((0, g1))
                xk, qk, _ = mcpd_reconstruct(y, pd1, ops, pcfg, iters=k1)
                in_warmup = step < warm
                loss, g2, fb = _deq_loss(pd2, y, x, ops, pcfg, not in_warmup,
                                         cfg.jacobian_free or in_warmup, xk, qk, iters=k2)
                result.fallbacks += fb
                updates.append((1, g2))
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            for gi, g in updates:
                new, states[gi] = adam_step(arrays_of(groups[gi]), g, states[gi])
                apply(groups[gi], new)
        except (FloatingPointError, DivergenceError) as exc:
            result.nets = last_good
            raise TrainingAborted(f"step {step}: {exc}", last_good, result.log) from exc
        last_good = [p.copy() for p in nets]
        result.losses.append(loss)
        if (step + 1) % cfg.val_every == 0 or step + 1 == cfg.steps:
            run = float(np.mean(result.losses[-cfg.val_every:]))
            result.log.append((step + 1, lr_now, run, val_psnr()))
            if progress:
                progress(step + 1, run, result.log[-1][3], time.perf_counter() - t0)
    result.nets = nets
    return result
