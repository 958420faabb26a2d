"""Synthetic initial-pressure phantoms: branching vessels, disks and points.

All generators return float64 images in [0, 1] and are deterministic for a
given seed. Images whose pixel sum does not exceed the feature-mass
threshold are rejected and redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GENERATORS",
    "PhantomSpec",
    "PhantomError",
    "default_threshold",
    "disk_image",
    "vessel_image",
    "disks_image",
    "points_image",
    "generate_phantoms",
]

GENERATORS = ("vessels", "disks", "points")


class PhantomError(RuntimeError):
    pass


def default_threshold(shape) -> float:
    """Pixel-sum threshold: 150 on an 80 x 128 patch, scaled by area."""
    return 150.0 * (shape[0] * shape[1]) / (80 * 128)


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "vessels"
    seed: int = 0
    shape: tuple = (80, 128)
    branches: tuple = (3, 6)
    width: tuple = (1.0, 3.0)
    intensity: tuple = (0.3, 1.0)
    threshold: float | None = None
    flip: bool = False

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator {self.kind!r}; expected one of {GENERATORS}")
        if len(self.shape) != 2 or min(self.shape) < 2:
            raise ValueError(f"bad phantom shape {self.shape}")
        lo, hi = self.intensity
        if not 0 <= lo <= hi <= 1:
            raise ValueError("intensity range must lie in [0, 1]")
        if not 0 < self.width[0] <= self.width[1]:
            raise ValueError("width range must be positive and ordered")

    @property
    def mass_threshold(self) -> float:
        return default_threshold(self.shape) if self.threshold is None else float(self.threshold)


def disk_image(shape, center, radius, intensity: float = 1.0) -> np.ndarray:
    """Indicator of the disk (pixel centres within ``radius``) times ``intensity``."""
    zz, xx = np.indices(shape)
    inside = (zz - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2
    return intensity * inside.astype(np.float64)


def _stroke(img, z, x, sigma, value):
    """Max-composite a Gaussian spot of width ``sigma`` at (z, x)."""
    r = int(np.ceil(3 * sigma))
    z0, z1 = max(int(z) - r, 0), min(int(z) + r + 2, img.shape[0])
    x0, x1 = max(int(x) - r, 0), min(int(x) + r + 2, img.shape[1])
    if z0 >= z1 or x0 >= x1:
        return
    zz, xx = np.mgrid[z0:z1, x0:x1]
    spot = value * np.exp(-((zz - z) ** 2 + (xx - x) ** 2) / (2 * sigma**2))
    np.maximum(img[z0:z1, x0:x1], spot, out=img[z0:z1, x0:x1])


def vessel_image(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Branching random walks drawn with Gaussian cross-sections."""
    nz, nx = spec.shape
    img = np.zeros(spec.shape)
    n_roots = int(rng.integers(spec.branches[0], spec.branches[1] + 1))
    walks = []
    for _ in range(n_roots):
        side = rng.integers(4)
        if side == 0:
            start, ang = (0.0, rng.uniform(0, nx)), rng.uniform(0.2, np.pi - 0.2)
        elif side == 1:
            start, ang = (nz - 1.0, rng.uniform(0, nx)), -rng.uniform(0.2, np.pi - 0.2)
        elif side == 2:
            start, ang = (rng.uniform(0, nz), 0.0), rng.uniform(-1.2, 1.2)
        else:
            start, ang = (rng.uniform(0, nz), nx - 1.0), np.pi + rng.uniform(-1.2, 1.2)
        walks.append((start, ang, rng.uniform(*spec.width), rng.uniform(*spec.intensity), 0))
    max_len = 2 * (nz + nx)
    while walks:
        (z, x), ang, width, value, depth = walks.pop()
        for _ in range(max_len):
            _stroke(img, z, x, width / 2.0, value)
            ang += rng.normal(0.0, 0.12)
            z += np.sin(ang)
            x += np.cos(ang)
            if not (-2 <= z <= nz + 1 and -2 <= x <= nx + 1):
                break
            if depth < 2 and rng.random() < 0.015:
                child_w = max(spec.width[0], width * rng.uniform(0.6, 0.9))
                child_v = float(np.clip(value * rng.uniform(0.8, 1.1), *spec.intensity))
                walks.append(((z, x), ang + rng.choice([-1, 1]) * rng.uniform(0.4, 1.0),
                              child_w, child_v, depth + 1))
    return np.clip(img, 0.0, 1.0)


def disks_image(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    nz, nx = spec.shape
    img = np.zeros(spec.shape)
    rmax = max(2.0, min(nz, nx) / 6)
    for _ in range(int(rng.integers(1, 4))):
        r = rng.uniform(2.0, rmax)
        c = (rng.uniform(r, nz - r), rng.uniform(r, nx - r))
        np.maximum(img, disk_image(spec.shape, c, r, rng.uniform(*spec.intensity)), out=img)
    return img


def points_image(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    nz, nx = spec.shape
    img = np.zeros(spec.shape)
    for _ in range(int(rng.integers(3, 12))):
        _stroke(img, rng.uniform(0, nz - 1), rng.uniform(0, nx - 1),
                rng.uniform(0.7, 1.5), rng.uniform(*spec.intensity))
    return img


_DRAW = {"vessels": vessel_image, "disks": disks_image, "points": points_image}


def generate_phantoms(spec: PhantomSpec, count: int) -> np.ndarray:
    """``count`` accepted images, stacked (plus their vertical flips if ``spec.flip``)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = np.random.default_rng(spec.seed)
    draw = _DRAW[spec.kind]
    out = []
    misses = 0
    while len(out) < count:
        img = draw(spec, rng)
        if img.sum() > spec.mass_threshold:
            out.append(img)
            misses = 0
        else:
            misses += 1
            if misses >= 100:
                raise PhantomError(
                    f"{spec.kind}: 100 consecutive images below feature mass {spec.mass_threshold:g}"
                )
    imgs = np.stack(out) if out else np.zeros((0, *spec.shape))
    if spec.flip:
        imgs = np.concatenate([imgs, imgs[:, ::-1, :]])
    return imgs
