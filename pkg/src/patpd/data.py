"""Simulated datasets: phantoms, clean and noisy sensor data, splits and manifests.

On disk a dataset is a directory holding

* ``dataset.txt``: key=value metadata (grid, noise level, seed, count),
* ``phantom_NNNN.patr``, ``clean_NNNN.patr``, ``noisy_NNNN.patr``,
* ``snr.csv``: per-sample SNR of the noisy data,
* ``split.csv`` (optional): ``index,partition`` rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import read_keyvalue, write_keyvalue
from .core import Grid, load_tensor, save_tensor
from .diagnostics import snr_db
from .reference_wave import simulate_forward

__all__ = ["PARTITIONS", "Dataset", "add_noise", "simulate_dataset", "split_dataset",
           "save_dataset", "load_dataset"]

PARTITIONS = ("train", "val", "test")


@dataclass
class Dataset:
    images: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    grid: Grid
    noise_frac: float
    seed: int = 0
    snr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    split: dict | None = None

    def __len__(self):
        return len(self.images)

    def part(self, name: str):
        """``(images, noisy data)`` of one partition."""
        if self.split is None:
            raise ValueError("dataset has no split")
        idx = np.asarray(self.split[name], dtype=int)
        return self.images[idx], self.noisy[idx]


def add_noise(clean: np.ndarray, noise_frac: float, rng: np.random.Generator) -> np.ndarray:
    """New array ``clean + N(0, (noise_frac * max|clean|)^2)``; ``clean`` is untouched."""
    if noise_frac < 0:
        raise ValueError("noise_frac must be >= 0")
    if noise_frac == 0:
        return clean.copy()
    std = noise_frac * np.max(np.abs(clean))
    return clean + std * rng.standard_normal(clean.shape)


def simulate_dataset(images, g: Grid, noise_frac: float = 0.01, seed: int = 0,
                     forward=None) -> Dataset:
    """Simulate every image with the reference solver and add per-sample noise.

    Noise for sample ``i`` is drawn from a generator seeded with ``(seed, i)``,
    so results do not depend on processing order.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != g.image_shape:
        raise ValueError(f"images must be (n, {g.nz}, {g.nx}), got {images.shape}")
    forward = forward or (lambda x: simulate_forward(x, g))
    clean = np.stack([forward(x) for x in images]) if len(images) else np.zeros((0, *g.data_shape))
    noisy = np.empty_like(clean)
    snr = np.empty(len(images))
    for i in range(len(images)):
        noisy[i] = add_noise(clean[i], noise_frac, np.random.default_rng([seed, i]))
        snr[i] = snr_db(clean[i], noisy[i]) if np.any(clean[i]) else float("nan")
    return Dataset(images, clean, noisy, g, float(noise_frac), seed, snr)


def split_dataset(n: int, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict:
    """Seeded disjoint, exhaustive partition of ``range(n)`` into train/val/test.

    Counts are ``floor(f * n)`` with the remainder handed out by largest
    fractional part. A partition with positive fraction but no members is an
    error.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0, atol=1e-9):
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    raw = fr * n
    counts = np.floor(raw + 1e-9).astype(int)
    rest = n - counts.sum()
    for i in np.argsort(-(raw - counts), kind="stable")[:rest]:
        counts[i] += 1
    for name, f, c in zip(PARTITIONS, fr, counts):
        if f > 0 and c == 0:
            raise ValueError(f"partition {name!r} would be empty")
    perm = np.random.default_rng(seed).permutation(n)
    out, start = {}, 0
    for name, c in zip(PARTITIONS, counts):
        out[name] = sorted(int(i) for i in perm[start:start + c])
        start += c
    return out


def _grid_meta(g: Grid) -> dict:
    return {"nz": g.nz, "nx": g.nx, "nt": g.nt, "dx": repr(g.dx), "c": repr(g.c), "dt": repr(g.dt)}


def save_dataset(ds: Dataset, directory, force: bool = False) -> Path:
    d = Path(directory)
    if d.exists() and any(d.iterdir()) and not force:
        raise FileExistsError(f"{d} exists and is not empty (use force)")
    d.mkdir(parents=True, exist_ok=True)
    meta = _grid_meta(ds.grid) | {"noise_frac": repr(ds.noise_frac), "seed": ds.seed,
                                   "count": len(ds)}
    write_keyvalue(d / "dataset.txt", meta)
    for i in range(len(ds)):
        save_tensor(d / f"phantom_{i:04d}.patr", ds.images[i])
        save_tensor(d / f"clean_{i:04d}.patr", ds.clean[i])
        save_tensor(d / f"noisy_{i:04d}.patr", ds.noisy[i])
    with open(d / "snr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "snr_db"])
        for i, s in enumerate(ds.snr):
            w.writerow([i, repr(float(s))])
    if ds.split is not None:
        write_split(d, ds.split)
    return d


def write_split(directory, split: dict) -> None:
    with open(Path(directory) / "split.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "partition"])
        rows = sorted((i, name) for name in PARTITIONS for i in split.get(name, []))
        w.writerows(rows)


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    meta = read_keyvalue(d / "dataset.txt")
    g = Grid(int(meta["nz"]), int(meta["nx"]), float(meta["dx"]), float(meta["c"]),
             float(meta["dt"]), int(meta["nt"]))
    n = int(meta["count"])
    load = lambda stem: np.stack([load_tensor(d / f"{stem}_{i:04d}.patr").astype(np.float64)
                                  for i in range(n)]) if n else np.zeros((0,))
    images, clean, noisy = load("phantom"), load("clean"), load("noisy")
    if n and (images.shape[1:] != g.image_shape or noisy.shape[1:] != g.data_shape):
        raise ValueError(f"{d}: tensor shapes do not match the recorded grid")
    snr = np.zeros(n)
    if (d / "snr.csv").exists():
        with open(d / "snr.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                snr[int(row["index"])] = float(row["snr_db"])
    split = None
    if (d / "split.csv").exists():
        split = {name: [] for name in PARTITIONS}
        with open(d / "split.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                split[row["partition"]].append(int(row["index"]))
    return Dataset(images, clean, noisy, g, float(meta["noise_frac"]), int(meta["seed"]), snr, split)
