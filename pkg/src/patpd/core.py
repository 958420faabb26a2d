"""Shared domain types, grid validation and the PATR tensor file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "GridError",
    "Image",
    "SensorData",
    "TensorFileError",
    "validate_grid",
    "full_grid",
    "desk_grid",
    "save_tensor",
    "load_tensor",
]

MAGIC = b"PATR"
VERSION = 1
_MAX_ELEMENTS = 2**31 - 1


class GridError(ValueError):
    """Raised when a grid violates one of its invariants."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TensorFileError(IOError):
    pass


@dataclass(frozen=True)
class Grid:
    """Computational domain: ``nz`` rows (depth), ``nx`` columns (sensor line).

    Row 0 is the sensor edge. Spacing ``dx`` is isotropic, ``dt`` is the
    temporal sampling of the ``nt`` recorded samples, ``c`` the sound speed.
    """

    nz: int
    nx: int
    dx: float
    c: float
    dt: float
    nt: int

    def __post_init__(self):
        _check(self)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.nz, self.nx)

    @property
    def data_shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)

    @property
    def cfl(self) -> float:
        return self.c * self.dt / self.dx

    def with_shape(self, nz: int, nx: int, nt: int | None = None) -> "Grid":
        return Grid(nz, nx, self.dx, self.c, self.dt, 2 * nz if nt is None else nt)


def _check(g) -> None:
    for name in ("nz", "nx", "nt"):
        v = getattr(g, name)
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise GridError(name, f"must be an integer, got {v!r}")
        if v < 2:
            raise GridError(name, f"must be >= 2, got {v}")
    for name in ("dx", "c", "dt"):
        v = getattr(g, name)
        try:
            fv = float(v)
        except (TypeError, ValueError):
            raise GridError(name, f"must be a real number, got {v!r}") from None
        if not np.isfinite(fv) or fv <= 0:
            raise GridError(name, f"must be finite and > 0, got {v!r}")
    ratio = float(g.c) * float(g.dt) / float(g.dx)
    if ratio > 1.0:
        raise GridError("CFL", f"c*dt/dx = {ratio:.4g} exceeds 1")


def validate_grid(g: Grid) -> Grid:
    """Return ``g`` unchanged if it satisfies every grid invariant.

    Works on any object with the six grid attributes, so it can be used on
    values built outside the ``Grid`` constructor. Raises ``GridError``
    naming the offending field otherwise.
    """
    for name in ("nz", "nx", "dx", "c", "dt", "nt"):
        if not hasattr(g, name):
            raise GridError(name, "missing")
    _check(g)
    return g


def full_grid() -> Grid:
    """80 x 128 pixels of 106 um, c = 1500 m/s, dt = 50 ns, 160 samples."""
    return Grid(nz=80, nx=128, dx=106e-6, c=1500.0, dt=50e-9, nt=160)


def desk_grid() -> Grid:
    """Default desk-scale grid (64 x 96, nt = 2 nz) with the full grid's spacing."""
    return Grid(nz=64, nx=96, dx=106e-6, c=1500.0, dt=50e-9, nt=128)


def _finite_array(values, shape, what) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise ValueError(f"{what} has shape {arr.shape}, grid expects {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Image:
    """Initial pressure on the image grid, ``nz x nx``."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        arr = _finite_array(self.values, self.grid.image_shape, "image")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class SensorData:
    """Pressure time series at the top-edge sensors, ``nt x nx``."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        arr = _finite_array(self.values, self.grid.data_shape, "sensor data")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def save_tensor(path, values) -> None:
    """Write ``values`` as a PATR file (little-endian float32, row-major).

    Layout: ``b"PATR"``, u32 version, u32 rank, rank x u32 dims, payload.
    """
    arr = np.asarray(values)
    if arr.ndim == 0:
        raise TensorFileError("rank-0 tensors are not supported")
    if any(d == 0 for d in arr.shape):
        raise TensorFileError(f"zero dim in shape {arr.shape}")
    if any(d > 0xFFFFFFFF for d in arr.shape) or arr.size > _MAX_ELEMENTS:
        raise TensorFileError(f"dimension overflow for shape {arr.shape}")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack(f"<II{arr.ndim}I", VERSION, arr.ndim, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    """Read a PATR file written by :func:`save_tensor` (returns float32)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    if rank == 0 or 12 + 4 * rank > len(raw):
        raise TensorFileError(f"{path}: bad rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    if any(d == 0 for d in dims):
        raise TensorFileError(f"{path}: zero dim in header")
    count = int(np.prod(dims, dtype=object))
    if count > _MAX_ELEMENTS:
        raise TensorFileError(f"{path}: dimension overflow")
    offset = 12 + 4 * rank
    if len(raw) - offset != 4 * count:
        raise TensorFileError(
            f"{path}: payload has {len(raw) - offset} bytes, expected {4 * count}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(dims).astype(np.float32)
