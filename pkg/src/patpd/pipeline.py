"""Glue between trained nets, operators and diagnostics (used by the CLI and demos)."""

from __future__ import annotations

import numpy as np

from .autodiff.nets import NetParams, lipschitz_estimate, net_apply
from .autodiff.optim import OptimState, adam_step
from .autodiff.tensor import Tensor, backward, matvec, tmean
from .diagnostics import (
    DiagnosticsReport,
    adjoint_gap_stats,
    check_contraction,
    check_nonexpansive,
    measure_epsilon,
)
from .fast_ops import build_plan, estimate_operator_norm, forward_map, inverse_map, reference_map
from .learned.pd import Operators, PDConfig, PDNets, make_operators, pddeq_forward

__all__ = [
    "corrected_forward",
    "train_linear_correction",
    "theory_quantities",
    "operator_report",
    "theory_report",
]


def corrected_forward(dual: NetParams, ops: Operators, y):
    """``x -> F(A x, y)`` for a data-space correction net and fixed data ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return lambda x: net_apply(dual, np.stack([ops.fwd(x), y]))


def train_linear_correction(fast: np.ndarray, adjoint_target: np.ndarray, *, steps: int = 20000,
                            lr: float = 3e-3, batch: int = 32, seed: int = 0) -> np.ndarray:
    """Learn a data-space matrix ``W`` so that ``(W Ax, h) ~ (x, B h)``.

    ``fast`` is the dense fast forward (data x image) and ``adjoint_target``
    the dense map ``B`` (image x data) whose adjoint the corrected forward
    should match. Each Adam step uses ``batch`` random Gaussian pairs and the
    mean squared adjoint mismatch. ``W`` starts at the identity.
    """
    n_data, n_img = fast.shape
    rng = np.random.default_rng(seed)
    w = np.eye(n_data)
    state = OptimState(lr, steps)
    ones = Tensor(np.ones((1, n_data)))
    for _ in range(steps):
        x = rng.standard_normal((n_img, batch))
        h = rng.standard_normal((n_data, batch))
        wt = Tensor(w, requires_grad=True)
        lhs = matvec(ones, matvec(wt, fast @ x) * h)
        rhs = np.sum(x * (adjoint_target @ h), axis=0)[None]
        d = lhs - rhs
        loss = tmean(d * d)
        backward(loss)
        (w,), state = adam_step([w], [wt.grad], state)
    return w


def theory_quantities(nets: PDNets, ops: Operators, sigma: float, tau: float, images, data, *,
                      pairs: int = 100, seed: int = 0, probes: int = 200) -> dict:
    """Measured constants for the firm-nonexpansiveness and contraction checks.

    ``images``/``data`` are matched samples. For the adjoint-mismatch bound
    each image (with its own data as the net's second channel) is paired with
    every data tensor in the set.
    """
    rng = np.random.default_rng(seed)
    n = len(images)
    inv_norm = estimate_operator_norm(ops.inv, iters=50)
    eps_vals, gaps = [], []
    for i in range(n):
        F = corrected_forward(nets.dual, ops, data[i])
        own = [(images[i], data[j]) for j in range(n)]
        eps_vals.append(measure_epsilon(F, ops.inv, own))
        gaps.append(adjoint_gap_stats(F, ops.inv, own)["max"])
    eps = max(e.epsilon for e in eps_vals)
    skipped = sum(e.skipped for e in eps_vals)
    used = sum(e.used for e in eps_vals)
    # random pairs of nonnegative images around the data set
    worst = np.inf
    coef = None
    per = max(1, pairs // n)
    count = 0
    for i in range(n):
        F = corrected_forward(nets.dual, ops, data[i])
        prs = []
        for _ in range(per if i < n - 1 else pairs - per * (n - 1)):
            a, b = images[rng.integers(n)], images[rng.integers(n)]
            prs.append((np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, None),
                        np.clip(b + 0.1 * rng.standard_normal(b.shape), 0, None)))
        res = check_nonexpansive(F, ops.inv, sigma, tau, eps, inv_norm, prs)
        worst = min(worst, res.worst_margin)
        coef = res.coefficient
        count += res.pairs
    shape = images[0].shape
    scale = float(np.std(images))
    eps_theta = lipschitz_estimate(nets.primal, shape, probes=probes, seed=seed, scale=scale)
    eps_phi = lipschitz_estimate(nets.dual, ops.data_shape, probes=probes, seed=seed,
                                 scale=float(np.std(data)))
    return {
        "inv_norm": inv_norm, "fwd_norm": ops.fwd_norm, "epsilon": eps,
        "epsilon_used": used, "epsilon_skipped": skipped, "adjoint_gap_max": max(gaps),
        "nonexpansive_coefficient": coef, "nonexpansive_worst_margin": worst,
        "nonexpansive_pairs": count, "eps_theta": eps_theta, "eps_phi": eps_phi,
        "delta": 1.0 - eps_theta,
    }


def operator_report(g, seed: int = 0) -> dict:
    plan = build_plan(g)
    fwd, inv = forward_map(plan), inverse_map(plan)
    rng = np.random.default_rng(seed)
    pairs = [(rng.random(g.image_shape), rng.random(g.data_shape)) for _ in range(10)]
    out = {
        "nz": g.nz, "nx": g.nx, "nt": g.nt,
        "fast_forward_norm": estimate_operator_norm(fwd, 50, seed),
        "fast_inverse_norm": estimate_operator_norm(inv, 50, seed),
        "evanescent_fraction": float(plan.evanescent.mean()),
        "fast_pair_gap_max": adjoint_gap_stats(fwd, inv, pairs)["max"],
    }
    if g.nz * g.nx <= 128 * 128:
        out["reference_norm"] = estimate_operator_norm(reference_map(g), 20, seed)
    return out


def theory_report(nets, meta: dict, ds, *, pairs: int = 100, deq_iters: int = 100, seed: int = 0,
                  curves=None) -> dict:
    pd = PDNets(nets[-2], nets[-1]) if len(nets) >= 2 else None
    if pd is None:
        raise ValueError("theory report needs a primal-dual checkpoint")
    ops = make_operators(ds.grid)
    sigma, tau = float(meta["sigma"]), float(meta["tau"])
    idx = list(ds.split["val"]) if ds.split else []
    if len(idx) < 2:
        idx = list(range(len(ds)))
    idx = idx[:10]
    imgs, ys = ds.images[idx], ds.noisy[idx]
    out = theory_quantities(pd, ops, sigma, tau, imgs, ys, pairs=pairs, seed=seed)
    cfg = PDConfig(sigma, tau, iters=deq_iters, input_scale=float(meta["input_scale"]))
    _, _, trace = pddeq_forward(ys[0], pd, ops, cfg)
    c = check_contraction(trace)
    out.update({"rate_slope": c.slope, "monotone_fraction": c.monotone_fraction,
                "dual_bound": c.dual_bound, "dual_bounded": c.dual_bounded})
    if curves:
        DiagnosticsReport.write_curves(curves, {"primal_res": trace.primal_res,
                                                "dual_res": trace.dual_res})
    return out
