"""Fast k-space photoacoustic operators and learned primal-dual reconstruction."""

__version__ = "0.1.0"

from .core import Grid, GridError, Image, SensorData, desk_grid, load_tensor, full_grid, save_tensor, validate_grid
from .fast_ops import (
    KSpacePlan,
    LinearMap,
    adjoint_gap,
    build_plan,
    estimate_operator_norm,
    fast_forward,
    fast_inverse,
)
from .reference_wave import adjoint_forward, assemble_dense, simulate_forward

__all__ = [
    "Grid",
    "GridError",
    "Image",
    "KSpacePlan",
    "LinearMap",
    "SensorData",
    "adjoint_forward",
    "adjoint_gap",
    "assemble_dense",
    "build_plan",
    "desk_grid",
    "estimate_operator_norm",
    "fast_forward",
    "fast_inverse",
    "load_tensor",
    "full_grid",
    "save_tensor",
    "simulate_forward",
    "validate_grid",
]
