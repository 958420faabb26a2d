"""Numerical checks of the convergence conditions, and image-quality metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import uniform_filter

from .fast_ops import LinearMap
from .variational import FixedPointTrace, SolverConfig, VariationalProblem, pdhg

__all__ = [
    "TABLE_REFERENCE_PSNR",
    "DiagnosticsReport",
    "Prop1Result",
    "EpsilonResult",
    "NonexpansiveResult",
    "ContractionResult",
    "adjoint_gap_stats",
    "check_prop1",
    "measure_epsilon",
    "nonexpansive_coefficient",
    "check_nonexpansive",
    "check_contraction",
    "psnr",
    "ssim",
    "snr_db",
]

# Published PSNR values at full scale; kept as metadata only, never as targets.
TABLE_REFERENCE_PSNR = {"mcpd": 29.34, "pddeq": 22.1, "hybrid": 24.27}


def _inner(a, b) -> float:
    return float(np.sum(np.asarray(a) * np.asarray(b)))


def adjoint_gap_stats(fwd: Callable, adj: Callable, pairs) -> dict:
    """Relative gaps ``|(fwd x, h) - (x, adj h)| / (|x| |h|)`` over ``(x, h)`` pairs."""
    gaps = []
    for x, h in pairs:
        g = _inner(fwd(x), h) - _inner(x, adj(h))
        gaps.append(abs(g) / (np.linalg.norm(x) * np.linalg.norm(h)))
    gaps = np.array(gaps)
    return {"max": float(gaps.max()), "mean": float(gaps.mean()), "count": len(gaps)}


@dataclass
class Prop1Result:
    gap: float  # max relative adjoint mismatch of the corrected forward against A^T
    deviation: np.ndarray  # |x_k(corrected) - x_k(accurate)| / |x_k(accurate)|, k = 1..K

    @property
    def max_deviation(self) -> float:
        return float(self.deviation.max())

    def deviation_at(self, k: int) -> float:
        return float(self.deviation[k - 1])


def check_prop1(corrected_forward: Callable, accurate: LinearMap, samples, y, *,
                cfg: SolverConfig, reg: str = "l2", lam: float = 0.0, x0=None,
                op_norm: float | None = None) -> Prop1Result:
    """Compare PDHG using ``corrected_forward`` in the dual step (and the accurate
    transpose in the primal step) with PDHG on the accurate operator.

    ``samples`` are ``(x, h)`` pairs for the adjoint-mismatch statistic.
    """
    gap = adjoint_gap_stats(corrected_forward, accurate.adjoint, samples)["max"]
    x0 = np.zeros(accurate.in_shape) if x0 is None else x0
    runs = []
    for fwd in (accurate, corrected_forward):
        prob = VariationalProblem(fwd, y, reg, lam, adjoint=accurate.adjoint)
        its = []
        pdhg(prob, cfg, x0, op_norm=op_norm, track_objective=False,
             callback=lambda k, x, q: its.append(x.copy()))
        runs.append(its)
    dev = np.array([np.linalg.norm(c - a) / max(np.linalg.norm(a), 1e-300)
                    for a, c in zip(*runs)])
    return Prop1Result(gap, dev)


@dataclass
class EpsilonResult:
    epsilon: float  # smallest eps >= 0 with (F(Ax), h) <= (1 + eps)(x, Ainv h) on retained samples
    worst_ratio: float
    used: int
    skipped: int

    @property
    def skip_rate(self) -> float:
        return self.skipped / (self.used + self.skipped)


def measure_epsilon(corrected_forward: Callable, inverse: Callable, samples) -> EpsilonResult:
    """Smallest ``eps`` with ``(F(A x), h) <= (1 + eps) (x, Ainv h)`` over the samples.

    Samples with ``(x, Ainv h) <= 0`` are skipped and counted.
    """
    ratios, skipped = [], 0
    for x, h in samples:
        den = _inner(x, inverse(h))
        if not den > 0:
            skipped += 1
            continue
        ratios.append(_inner(corrected_forward(x), h) / den)
    if not ratios:
        raise ValueError("every sample had a non-positive (x, Ainv h)")
    worst = max(ratios)
    return EpsilonResult(max(worst - 1.0, 0.0), worst, len(ratios), skipped)


def nonexpansive_coefficient(eps: float, sigma: float, tau: float, inv_norm: float) -> float:
    """``(1 + eps) * tau * sigma / (1 + sigma) * inv_norm^2``; at most 1 is required."""
    return (1.0 + eps) * tau * sigma / (1.0 + sigma) * inv_norm**2


@dataclass
class NonexpansiveResult:
    coefficient: float
    worst_margin: float  # min over pairs of ((Tx - Tv, x - v) - |Tx - Tv|^2) / |x - v|^2
    pairs: int

    @property
    def coefficient_ok(self) -> bool:
        return self.coefficient <= 1.0

    @property
    def passed(self) -> bool:
        return self.coefficient_ok and self.worst_margin >= -1e-8


def check_nonexpansive(corrected_forward: Callable, inverse: Callable, sigma: float, tau: float,
                       eps: float, inv_norm: float, pairs) -> NonexpansiveResult:
    """Evaluate the step-size coefficient and test firm nonexpansiveness of
    ``T(x) = tau * sigma / (1 + sigma) * Ainv F(A x)`` on the given pairs."""
    coef = nonexpansive_coefficient(eps, sigma, tau, inv_norm)
    scale = tau * sigma / (1.0 + sigma)
    worst, n = math.inf, 0
    for x, v in pairs:
        d = np.asarray(x) - np.asarray(v)
        dd = _inner(d, d)
        if dd == 0:
            continue
        dt = scale * (np.asarray(inverse(corrected_forward(x))) - np.asarray(inverse(corrected_forward(v))))
        worst = min(worst, (_inner(dt, d) - _inner(dt, dt)) / dd)
        n += 1
    return NonexpansiveResult(coef, worst, n)


@dataclass
class ContractionResult:
    slope: float
    monotone_fraction: float
    dual_bound: float  # C_q: largest dual residual norm
    dual_bounded: bool  # late dual residuals never exceed the early maximum
    fit_points: int


def check_contraction(trace, dual=None, start: int = 10, floor: float = 1e-13) -> ContractionResult:
    """Fit ``log r_k`` against ``log k`` for ``k >= start`` (k counted from 1).

    Residuals at or below ``floor`` (round-off level) are left out of the fit.
    ``dual_bounded`` holds when no dual residual after ``start`` exceeds the
    maximum over the first ``start`` iterations.
    """
    if isinstance(trace, FixedPointTrace):
        r = np.asarray(trace.primal_res, dtype=np.float64)
        dual = np.asarray(trace.dual_res if dual is None else dual, dtype=np.float64)
    else:
        r = np.asarray(trace, dtype=np.float64)
        dual = None if dual is None else np.asarray(dual, dtype=np.float64)
    if len(r) < 20:
        raise ValueError(f"need at least 20 residuals, got {len(r)}")
    k = np.arange(1, len(r) + 1)
    sel = (k >= start) & (r > floor) & np.isfinite(r)
    if sel.sum() < 2:
        slope = -math.inf
    else:
        slope = float(np.polyfit(np.log(k[sel]), np.log(r[sel]), 1)[0])
    tail = r[start - 1:]
    mono = float(np.mean(np.diff(tail) <= 0)) if len(tail) > 1 else 1.0
    if dual is None or not np.any(np.isfinite(dual)):
        cq, bounded = float("nan"), True
    else:
        cq = float(np.nanmax(dual))
        bounded = bool(np.nanmax(dual[start:]) <= np.nanmax(dual[:start])) if len(dual) > start else True
    return ContractionResult(slope, mono, cq, bounded, int(sel.sum()))


def psnr(x, ref, data_range: float = 1.0) -> float:
    """``10 log10(range^2 / MSE)``; identical images give ``inf``."""
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    mse = np.mean((x - ref) ** 2)
    return math.inf if mse == 0 else float(10 * np.log10(data_range**2 / mse))


def ssim(x, ref, data_range: float = 1.0, window: int = 7, k1: float = 0.01,
         k2: float = 0.03) -> float:
    """Mean SSIM over all fully contained ``window`` x ``window`` uniform windows.

    Local (co)variances use the unbiased ``N - 1`` normalisation.
    """
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} smaller than the {window}x{window} window")
    n = window * window
    cov_norm = n / (n - 1)
    filt = lambda a: uniform_filter(a, size=window, mode="reflect")
    ux, uy = filt(x), filt(ref)
    vx = cov_norm * (filt(x * x) - ux * ux)
    vy = cov_norm * (filt(ref * ref) - uy * uy)
    vxy = cov_norm * (filt(x * ref) - ux * uy)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    r = window // 2
    return float(s[r:s.shape[0] - r, r:s.shape[1] - r].mean())


def snr_db(clean, noisy) -> float:
    """``10 log10(|clean|^2 / |noisy - clean|^2)``; no noise gives ``inf``."""
    clean, noisy = np.asarray(clean, dtype=np.float64), np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ValueError(f"shape mismatch {clean.shape} vs {noisy.shape}")
    sig = np.sum(clean * clean)
    if sig == 0:
        raise ValueError("clean signal is all zero")
    err = np.sum((noisy - clean) ** 2)
    return math.inf if err == 0 else float(10 * np.log10(sig / err))


@dataclass
class DiagnosticsReport:
    """Flat collection of named numbers, written as ``key=value`` lines.

    The Lipschitz entry for the primal net is a probe-based lower bound,
    not a certificate.
    """

    entries: dict = field(default_factory=dict)

    def set(self, key: str, value) -> None:
        self.entries[key] = value

    def update(self, values: dict) -> None:
        self.entries.update(values)

    def __getitem__(self, key):
        return self.entries[key]

    def to_text(self) -> str:
        lines = []
        for k, v in self.entries.items():
            lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @staticmethod
    def write_curves(path, columns: dict) -> None:
        names = list(columns)
        n = max(len(v) for v in columns.values())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", *names])
            for i in range(n):
                w.writerow([i + 1, *(repr(float(columns[c][i])) if i < len(columns[c]) else ""
                                     for c in names)])
