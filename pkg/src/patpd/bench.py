"""Wall-clock timing of single operator applications."""

from __future__ import annotations

import csv
import time

import numpy as np

from .core import Grid, full_grid
from .fast_ops import build_plan, fast_forward, fast_inverse
from .reference_wave import adjoint_forward, simulate_forward

__all__ = ["BENCH_METHODS", "parse_size", "bench", "write_bench_csv"]


def _runner(method: str, g: Grid):
    rng = np.random.default_rng(0)
    x = rng.random(g.image_shape)
    y = rng.standard_normal(g.data_shape)
    if method == "fast_forward":
        plan = build_plan(g)
        return lambda: fast_forward(x, plan)
    if method == "fast_inverse":
        plan = build_plan(g)
        return lambda: fast_inverse(y, plan)
    if method == "reference":
        return lambda: simulate_forward(x, g)
    if method == "reference_adjoint":
        return lambda: adjoint_forward(y, g)
    raise ValueError(f"unknown bench method {method!r}; expected one of {BENCH_METHODS}")


BENCH_METHODS = ("fast_forward", "fast_inverse", "reference", "reference_adjoint")


def parse_size(text: str) -> tuple[int, int, int]:
    """``"NZxNX"`` or ``"NZxNXxNT"`` (nt defaults to 2 * nz)."""
    parts = [int(p) for p in text.lower().split("x")]
    if len(parts) == 2:
        parts.append(2 * parts[0])
    if len(parts) != 3:
        raise ValueError(f"bad size {text!r}, expected NZxNX or NZxNXxNT")
    return tuple(parts)


def bench(methods, sizes, repeat: int = 3, base: Grid | None = None) -> list[dict]:
    """One row per (size, method): best-of-``repeat`` seconds, or ``skip``."""
    base = base or full_grid()
    rows = []
    for size in sizes:
        nz, nx, nt = parse_size(size) if isinstance(size, str) else size
        g = base.with_shape(nz, nx, nt)
        for m in methods:
            try:
                run = _runner(m, g)
                run()  # warm caches and plans
                best = min(_timed(run) for _ in range(repeat))
                rows.append({"method": m, "nz": nz, "nx": nx, "nt": nt, "seconds": best})
            except MemoryError:
                rows.append({"method": m, "nz": nz, "nx": nx, "nt": nt, "seconds": "skip"})
    return rows


def _timed(fn) -> float:
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


def write_bench_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "nz", "nx", "nt", "seconds"])
        for r in rows:
            w.writerow([r["method"], r["nz"], r["nx"], r["nt"], r["seconds"]])
