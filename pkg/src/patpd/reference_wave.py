"""Pseudo-spectral k-space time stepping of the 2D acoustic initial value problem.

The propagator is exact for homogeneous media on a periodic grid: with
``theta(k) = c |k| dt`` the leapfrog recursion

    p[n+1] = 2 cos(theta) p[n] - p[n-1]

(evaluated in Fourier space) reproduces ``cos(n theta) p[0]``. The grid is
padded on every side and a cosine-tapered damping ramp absorbs outgoing
waves before they wrap around. Sensors sit on row 0 of the physical image.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import Grid, validate_grid

__all__ = [
    "WaveState",
    "WavePlan",
    "wave_plan",
    "simulate_forward",
    "adjoint_forward",
    "assemble_dense",
]

DAMPING_FLOOR = 0.90
DENSE_CAP = 4096


@dataclass(frozen=True)
class WavePlan:
    """Precomputed padding, propagator symbol and damping mask for one grid."""

    grid: Grid
    pad: int
    shape: tuple[int, int]
    cos_theta: np.ndarray  # rfft2 layout
    mask: np.ndarray


@dataclass
class WaveState:
    """Leapfrog state: current and previous pressure on the padded grid."""

    p: np.ndarray
    p_prev: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.p.shape != self.p_prev.shape or self.p.shape != self.mask.shape:
            raise ValueError("wave state arrays must share the padded shape")
        if np.any(self.mask <= 0) or np.any(self.mask > 1):
            raise ValueError("damping mask must lie in (0, 1]")


def _ramp(n: int, pad: int) -> np.ndarray:
    # distance into the padding, 0 inside the physical domain
    idx = np.arange(n)
    depth = np.maximum(pad - idx, idx - (n - 1 - pad)).clip(min=0)
    taper = 0.5 * (1.0 - np.cos(np.pi * depth / max(pad, 1)))
    return 1.0 - (1.0 - DAMPING_FLOOR) * taper


@lru_cache(maxsize=16)
def wave_plan(g: Grid) -> WavePlan:
    validate_grid(g)
    pad = max(g.nz // 2, 1)
    nzp, nxp = g.nz + 2 * pad, g.nx + 2 * pad
    kz = 2 * np.pi * np.fft.fftfreq(nzp, d=g.dx)
    kx = 2 * np.pi * np.fft.rfftfreq(nxp, d=g.dx)
    kk = np.sqrt(kz[:, None] ** 2 + kx[None, :] ** 2)
    cos_theta = np.cos(g.c * g.dt * kk)
    mask = np.minimum.outer(_ramp(nzp, pad), _ramp(nxp, pad))
    cos_theta.flags.writeable = False
    mask.flags.writeable = False
    return WavePlan(g, pad, (nzp, nxp), cos_theta, mask)


def _cos_op(plan: WavePlan, f: np.ndarray) -> np.ndarray:
    return np.fft.irfft2(plan.cos_theta * np.fft.rfft2(f), s=plan.shape)


def _embed(plan: WavePlan, x: np.ndarray) -> np.ndarray:
    out = np.zeros(plan.shape)
    p = plan.pad
    out[p : p + x.shape[0], p : p + x.shape[1]] = x
    return out


def _checked(values, shape, what) -> np.ndarray:
    arr = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if arr.shape != tuple(shape):
        raise ValueError(f"{what} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


def simulate_forward(x, g: Grid) -> np.ndarray:
    """Accurate forward model: initial pressure (nz, nx) -> sensor data (nt, nx).

    ``y[n]`` is the pressure on image row 0 at time ``n * dt``. The history
    slot is initialised with ``cos(theta) x`` so that the zero initial
    velocity condition holds to the accuracy of the propagator itself.
    """
    plan = wave_plan(g)
    x = _checked(x, g.image_shape, "image")
    m, row, cols = plan.mask, plan.pad, slice(plan.pad, plan.pad + g.nx)
    p = _embed(plan, x)
    p_prev = _cos_op(plan, p)
    y = np.empty((g.nt, g.nx))
    y[0] = p[row, cols]
    for n in range(1, g.nt):
        nxt = 2.0 * _cos_op(plan, p) - p_prev
        p_prev, p = m * p, m * nxt
        y[n] = p[row, cols]
    return y


def adjoint_forward(y, g: Grid) -> np.ndarray:
    """Exact discrete transpose of :func:`simulate_forward`."""
    plan = wave_plan(g)
    y = _checked(y, g.data_shape, "sensor data")
    m, row, cols = plan.mask, plan.pad, slice(plan.pad, plan.pad + g.nx)
    # adjoint variables of (p, p_prev) after the last step
    bp = np.zeros(plan.shape)
    bprev = np.zeros(plan.shape)
    for n in range(g.nt - 1, 0, -1):
        bp[row, cols] += y[n]
        bnxt = m * bp
        bp = m * bprev + 2.0 * _cos_op(plan, bnxt)
        bprev = -bnxt
    bp[row, cols] += y[0]
    full = bp + _cos_op(plan, bprev)
    p = plan.pad
    return full[p : p + g.nz, p : p + g.nx].copy()


def assemble_dense(op, in_shape, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense matrix of a linear operator by applying it to every basis array.

    Column ``j`` holds ``op(e_j).ravel()`` where ``e_j`` is the ``j``-th
    row-major basis array of shape ``in_shape``.
    """
    in_shape = tuple(int(s) for s in np.atleast_1d(in_shape))
    n = int(np.prod(in_shape))
    if n > cap:
        raise ValueError(f"size cap exceeded: {n} inputs > {cap}")
    cols = []
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols.append(np.array(op(e.reshape(in_shape)), dtype=np.float64).ravel())
        e[j] = 0.0
    return np.stack(cols, axis=1)
