"""Fast approximate forward/inverse maps for a line sensor on the top edge.

Both maps work column-wise in lateral wavenumber ``k1``. Depth and time are
handled by type-I cosine transforms (even extension + FFT), and the two
spectra are connected through the dispersion relation
``(omega / c)**2 = k1**2 + k2**2`` with linear interpolation:

* forward: image spectrum sampled at ``k2(omega_j)`` on the time-frequency
  grid, weighted by ``B = omega / sqrt(omega**2 - (c k1)**2)``;
* inverse: data spectrum divided by ``B`` and sampled at ``omega(k2_m)``.

``B`` is stored dimensionless (``B(0, omega) = 1``). Its singularity at
``omega = c |k1|`` is sampled as-is, which is what produces the aliasing of
the forward map. FFTs are unnormalized forward, ``1/N`` inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .core import Grid, validate_grid

__all__ = [
    "KSpacePlan",
    "LinearMap",
    "build_plan",
    "fast_forward",
    "fast_forward_adjoint",
    "fast_inverse",
    "fast_inverse_adjoint",
    "forward_map",
    "inverse_map",
    "reference_map",
    "dense_map",
    "estimate_operator_norm",
    "adjoint_gap",
]

SINGULAR_RTOL = 1e-12


def dct1(v: np.ndarray, axis: int = 0) -> np.ndarray:
    """Unnormalized type-I DCT via an FFT of the even extension.

    ``dct1(dct1(v)) == 2 (N - 1) v``. Complex input is transformed
    linearly (real and imaginary parts independently).
    """
    v = np.moveaxis(np.asarray(v), axis, 0)
    n = v.shape[0]
    ext = np.concatenate([v, v[n - 2 : 0 : -1]], axis=0)
    out = np.fft.fft(ext, axis=0)[:n]
    if not np.iscomplexobj(v):
        out = out.real
    return np.moveaxis(out, 0, axis)


def _dct1_t(v: np.ndarray, axis: int = 0) -> np.ndarray:
    # transpose of dct1: w * dct1(v / w) with trapezoid weights w = [1, 2, ..., 2, 1]
    n = np.shape(v)[axis]
    w = np.full(n, 2.0)
    w[0] = w[-1] = 1.0
    shape = [1] * np.ndim(v)
    shape[axis] = n
    w = w.reshape(shape)
    return w * dct1(v / w, axis=axis)


def _interp_matrix(u: np.ndarray, valid: np.ndarray, n_src: int) -> sp.csr_matrix:
    """Row-major sparse linear interpolation along axis 0, one column at a time.

    ``u`` has shape (n_tgt, ncol) and holds fractional source indices.
    """
    n_tgt, ncol = u.shape
    i0 = np.clip(np.floor(u), 0, n_src - 2).astype(np.int64)
    frac = np.where(valid, u - i0, 0.0)
    cols = np.arange(ncol)[None, :]
    rows = np.arange(n_tgt)[:, None] * ncol + cols
    src0 = i0 * ncol + cols
    keep = valid.ravel()
    r = np.concatenate([rows.ravel()[keep], rows.ravel()[keep]])
    c = np.concatenate([src0.ravel()[keep], (src0 + ncol).ravel()[keep]])
    w = np.concatenate([(1.0 - frac).ravel()[keep], frac.ravel()[keep]])
    m = sp.csr_matrix((w, (r, c)), shape=(n_tgt * ncol, n_src * ncol))
    m.sum_duplicates()
    return m


@dataclass(frozen=True, eq=False)
class KSpacePlan:
    """Static k-grids, weights and interpolation tables for one grid."""

    grid: Grid
    k1: np.ndarray
    k2: np.ndarray
    omega: np.ndarray
    B: np.ndarray
    evanescent: np.ndarray
    fwd_pos: np.ndarray
    fwd_valid: np.ndarray
    inv_pos: np.ndarray
    inv_valid: np.ndarray
    fwd_interp: sp.csr_matrix
    inv_interp: sp.csr_matrix
    scale: float

    @property
    def inv_B(self) -> np.ndarray:
        out = np.zeros_like(self.B)
        nz = self.B != 0
        out[nz] = 1.0 / self.B[nz]
        return out

    def interp_weights(self, which: str = "forward") -> np.ndarray:
        """Dense (targets x sources) weight array for one k1 column set."""
        m = self.fwd_interp if which == "forward" else self.inv_interp
        return m.toarray()


def build_plan(g: Grid) -> KSpacePlan:
    """Precompute everything the fast maps need. Cached per grid."""
    return _build_plan(validate_grid(g))


@lru_cache(maxsize=16)
def _build_plan(g: Grid) -> KSpacePlan:
    nz, nx, nt, c = g.nz, g.nx, g.nt, g.c
    k1 = 2 * np.pi * np.fft.fftfreq(nx, d=g.dx)
    dk2 = np.pi / (g.dx * (nz - 1))
    domega = np.pi / (g.dt * (nt - 1))
    k2 = dk2 * np.arange(nz)
    omega = domega * np.arange(nt)

    ck1 = c * np.abs(k1)[None, :]
    w = omega[:, None]
    # grid points on (or within rounding of) the singular line count as evanescent
    evanescent = w <= ck1 * (1.0 + SINGULAR_RTOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.sqrt(np.where(evanescent, 1.0, w**2 - ck1**2))
        B = np.where(evanescent, 0.0, w / root)

    with np.errstate(invalid="ignore"):
        kz = np.sqrt(np.where(evanescent, 0.0, (w / c) ** 2 - k1[None, :] ** 2))
    fwd_pos = kz / dk2
    fwd_valid = ~evanescent & (fwd_pos <= nz - 1)
    fwd_pos = np.where(fwd_valid, fwd_pos, 0.0)

    om = c * np.sqrt(k2[:, None] ** 2 + k1[None, :] ** 2)
    inv_pos = om / domega
    inv_valid = inv_pos <= nt - 1
    # below the first propagating sample of a column, hold that sample rather
    # than blending with the masked (zero) neighbour
    first = np.argmax(~evanescent, axis=0).astype(float)
    inv_pos = np.where(inv_valid, np.maximum(inv_pos, first[None, :]), 0.0)

    fwd_interp = _interp_matrix(fwd_pos, fwd_valid, nz)
    inv_interp = _interp_matrix(inv_pos, inv_valid, nt)
    for arr in (k1, k2, omega, B, evanescent, fwd_pos, fwd_valid, inv_pos, inv_valid):
        arr.flags.writeable = False
    scale = g.dx / (2.0 * c * g.dt * 2 * (nt - 1))
    return KSpacePlan(
        g, k1, k2, omega, B, evanescent, fwd_pos, fwd_valid, inv_pos, inv_valid,
        fwd_interp, inv_interp, scale,
    )


def _as_array(v, shape, what) -> np.ndarray:
    arr = np.asarray(getattr(v, "values", v), dtype=np.float64)
    if arr.shape != tuple(shape):
        raise ValueError(f"{what} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


def _apply_interp(m: sp.csr_matrix, v: np.ndarray, out_rows: int) -> np.ndarray:
    return (m @ v.ravel()).reshape(out_rows, v.shape[1])


def fast_forward(x, plan: KSpacePlan) -> np.ndarray:
    """Approximate forward map: image (nz, nx) -> sensor data (nt, nx)."""
    g = plan.grid
    x = _as_array(x, g.image_shape, "image")
    spec = dct1(np.fft.fft(x, axis=1), axis=0)
    v = _apply_interp(plan.fwd_interp, spec, g.nt) * plan.B
    return np.fft.ifft(plan.scale * dct1(v, axis=0), axis=1).real


def fast_forward_adjoint(h, plan: KSpacePlan) -> np.ndarray:
    """Exact transpose of :func:`fast_forward`."""
    g = plan.grid
    h = _as_array(h, g.data_shape, "sensor data")
    v = plan.scale * _dct1_t(np.fft.fft(h, axis=1), axis=0) * plan.B
    spec = (plan.fwd_interp.T @ v.ravel()).reshape(g.nz, g.nx)
    return np.fft.ifft(_dct1_t(spec, axis=0), axis=1).real


def _inverse_gain(g: Grid, plan: KSpacePlan) -> float:
    return 1.0 / (2 * (g.nz - 1) * 2 * (g.nt - 1) * plan.scale)


def fast_inverse(y, plan: KSpacePlan) -> np.ndarray:
    """Fast inverse map: sensor data (nt, nx) -> image (nz, nx)."""
    g = plan.grid
    y = _as_array(y, g.data_shape, "sensor data")
    v = dct1(np.fft.fft(y, axis=1), axis=0) * plan.inv_B
    spec = _apply_interp(plan.inv_interp, v, g.nz)
    return np.fft.ifft(_inverse_gain(g, plan) * dct1(spec, axis=0), axis=1).real


def fast_inverse_adjoint(x, plan: KSpacePlan) -> np.ndarray:
    """Exact transpose of :func:`fast_inverse`."""
    g = plan.grid
    x = _as_array(x, g.image_shape, "image")
    spec = _inverse_gain(g, plan) * _dct1_t(np.fft.fft(x, axis=1), axis=0)
    v = (plan.inv_interp.T @ spec.ravel()).reshape(g.nt, g.nx) * plan.inv_B
    return np.fft.ifft(_dct1_t(v, axis=0), axis=1).real


@dataclass(frozen=True)
class LinearMap:
    """A linear operator between array shapes together with its transpose."""

    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    in_shape: tuple
    out_shape: tuple

    def __call__(self, v):
        return self.apply(v)

    @property
    def T(self) -> "LinearMap":
        return LinearMap(self.adjoint, self.apply, self.out_shape, self.in_shape)

    def scaled(self, s: float) -> "LinearMap":
        return LinearMap(
            lambda v: s * self.apply(v), lambda v: s * self.adjoint(v),
            self.in_shape, self.out_shape,
        )


def forward_map(plan: KSpacePlan) -> LinearMap:
    g = plan.grid
    return LinearMap(
        lambda x: fast_forward(x, plan), lambda h: fast_forward_adjoint(h, plan),
        g.image_shape, g.data_shape,
    )


def inverse_map(plan: KSpacePlan) -> LinearMap:
    g = plan.grid
    return LinearMap(
        lambda y: fast_inverse(y, plan), lambda x: fast_inverse_adjoint(x, plan),
        g.data_shape, g.image_shape,
    )


def reference_map(g: Grid) -> LinearMap:
    from .reference_wave import adjoint_forward, simulate_forward

    return LinearMap(
        lambda x: simulate_forward(x, g), lambda y: adjoint_forward(y, g),
        g.image_shape, g.data_shape,
    )


def dense_map(matrix: np.ndarray, in_shape, out_shape) -> LinearMap:
    m = np.asarray(matrix, dtype=np.float64)
    in_shape, out_shape = tuple(in_shape), tuple(out_shape)
    return LinearMap(
        lambda v: (m @ np.ravel(v)).reshape(out_shape),
        lambda w: (m.T @ np.ravel(w)).reshape(in_shape),
        in_shape, out_shape,
    )


def estimate_operator_norm(op: LinearMap, iters: int = 50, seed: int = 0,
                           return_history: bool = False):
    """Largest singular value of ``op`` by power iteration on ``op.T @ op``.

    The Rayleigh-quotient estimates are nondecreasing; the square root of the
    last one is returned (with the whole history if requested).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_shape)
    v /= np.linalg.norm(v)
    history = []
    for _ in range(iters):
        av = op.apply(v)
        history.append(float(np.sqrt(np.vdot(av, av).real)))
        w = op.adjoint(av)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
    est = history[-1]
    return (est, np.array(history)) if return_history else est


def adjoint_gap(fwd, inv_or_adj, x, h) -> float:
    """``(fwd(x), h) - (x, inv_or_adj(h))`` with plain pointwise sums."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    fx = np.asarray(fwd(x))
    bh = np.asarray(inv_or_adj(h))
    if fx.shape != h.shape or bh.shape != x.shape:
        raise ValueError(
            f"shape mismatch: fwd(x) {fx.shape} vs h {h.shape}, adj(h) {bh.shape} vs x {x.shape}"
        )
    return float(np.sum(fx * h) - np.sum(x * bh))
