import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patpd.config import parse_keyvalue, read_keyvalue, write_keyvalue
from patpd.data import add_noise, load_dataset, save_dataset, simulate_dataset, split_dataset
from patpd.diagnostics import snr_db
from patpd.phantoms import PhantomError, PhantomSpec, default_threshold, disk_image, generate_phantoms
from patpd.png import to_uint8, write_png


# phantoms

@pytest.mark.parametrize("kind", ["vessels", "disks", "points"])
def test_phantoms_deterministic_and_bounded(kind):
    spec = PhantomSpec(kind, seed=3, shape=(32, 48))
    a, b = generate_phantoms(spec, 5), generate_phantoms(spec, 5)
    assert a.shape == (5, 32, 48) and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert np.all(a.sum(axis=(1, 2)) > spec.mass_threshold)


def test_vessel_threshold_on_patch_size():
    spec = PhantomSpec("vessels", seed=0, shape=(80, 128))
    assert spec.mass_threshold == 150.0 == default_threshold((80, 128))
    imgs = generate_phantoms(spec, 8)
    assert np.all(imgs.sum(axis=(1, 2)) > 150)


def test_vessel_intensity_range():
    imgs = generate_phantoms(PhantomSpec("vessels", seed=1, shape=(40, 64)), 4)
    for im in imgs:
        assert 0.3 - 1e-12 <= im.max() <= 1.0


def test_flip_doubles():
    spec = PhantomSpec("disks", seed=2, shape=(20, 30), flip=True)
    imgs = generate_phantoms(spec, 3)
    assert imgs.shape[0] == 6 and np.array_equal(imgs[3:], imgs[:3, ::-1, :])


def test_disk_area():
    img = disk_image((21, 21), (10, 10), 5)
    # lattice points with i^2 + j^2 <= 25 (Gauss circle count)
    assert img.sum() == 81
    assert abs(img.sum() - np.pi * 25) <= 2 * np.pi * 5


def test_phantom_failure_and_validation():
    with pytest.raises(PhantomError):
        generate_phantoms(PhantomSpec("points", shape=(10, 10), threshold=1e9), 1)
    with pytest.raises(ValueError):
        PhantomSpec("drive")
    with pytest.raises(ValueError):
        PhantomSpec(intensity=(0.5, 1.5))
    with pytest.raises(ValueError):
        generate_phantoms(PhantomSpec(), -1)
    assert generate_phantoms(PhantomSpec(shape=(8, 8)), 0).shape == (0, 8, 8)


# noise and simulation

def test_add_noise_properties():
    clean = np.random.default_rng(0).standard_normal((30, 40))
    keep = clean.copy()
    assert np.array_equal(add_noise(clean, 0.0, np.random.default_rng(1)), clean)
    a = add_noise(clean, 0.05, np.random.default_rng(1))
    b = add_noise(clean, 0.05, np.random.default_rng(1))
    assert np.array_equal(a, b) and np.array_equal(clean, keep)
    std = np.std(a - clean)
    assert abs(std / (0.05 * np.abs(clean).max()) - 1) < 0.05
    with pytest.raises(ValueError):
        add_noise(clean, -0.1, np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_ds(small_grid):
    imgs = generate_phantoms(PhantomSpec(seed=4, shape=small_grid.image_shape), 6)
    return simulate_dataset(imgs, small_grid, 0.01, seed=7)


def test_simulate_dataset(small_ds, small_grid):
    ds = small_ds
    assert ds.clean.shape == (6, *small_grid.data_shape) and len(ds) == 6
    assert np.all(np.isfinite(ds.snr))
    for i in range(6):
        assert ds.snr[i] == pytest.approx(snr_db(ds.clean[i], ds.noisy[i]))
    again = simulate_dataset(ds.images, small_grid, 0.01, seed=7)
    assert np.array_equal(again.noisy, ds.noisy)
    clean = simulate_dataset(ds.images[:2], small_grid, 0.0, seed=7)
    assert np.array_equal(clean.noisy, clean.clean)
    with pytest.raises(ValueError):
        simulate_dataset(ds.images[:, :4], small_grid)


def test_dataset_roundtrip(small_ds, tmp_path):
    ds = small_ds
    ds.split = split_dataset(len(ds), (0.5, 0.5, 0.0), 1)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.grid == ds.grid and back.noise_frac == 0.01
    f32 = lambda a: a.astype(np.float32).astype(np.float64)  # tensor files hold float32
    assert np.array_equal(back.noisy, f32(ds.noisy)) and np.array_equal(back.images, f32(ds.images))
    assert back.split == ds.split and np.array_equal(back.snr, ds.snr)
    x, y = back.part("train")
    assert len(x) == 3 and y.shape[1:] == ds.grid.data_shape
    with pytest.raises(FileExistsError):
        save_dataset(ds, tmp_path / "d")
    ds.split = None


# splits

def test_split_examples():
    assert split_dataset(10, (1, 0, 0)) == {"train": list(range(10)), "val": [], "test": []}
    s = split_dataset(100, (0.8, 0.1, 0.1), 3)
    assert [len(s[k]) for k in ("train", "val", "test")] == [80, 10, 10]
    assert s == split_dataset(100, (0.8, 0.1, 0.1), 3)
    with pytest.raises(ValueError):
        split_dataset(10, (0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        split_dataset(3, (0.98, 0.01, 0.01))


@given(n=st.integers(3, 300), a=st.floats(0.1, 0.8), seed=st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_split_disjoint_exhaustive(n, a, seed):
    fr = (a, (1 - a) / 2, (1 - a) / 2)
    try:
        s = split_dataset(n, fr, seed)
    except ValueError:
        return
    allidx = s["train"] + s["val"] + s["test"]
    assert sorted(allidx) == list(range(n))


# config and png

def test_keyvalue(tmp_path):
    text = "# header\nsteps = 200  # comment\nlr=1e-3\n\n"
    assert parse_keyvalue(text) == {"steps": "200", "lr": "1e-3"}
    with pytest.raises(ValueError, match=":2:"):
        parse_keyvalue("a=1\nbad line\n")
    with pytest.raises(ValueError):
        parse_keyvalue("=1")
    write_keyvalue(tmp_path / "c.txt", {"a": 1, "b": "x"})
    assert read_keyvalue(tmp_path / "c.txt") == {"a": "1", "b": "x"}


def test_png(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, -1.0]])
    assert to_uint8(img).tolist() == [[0, 128], [255, 0]]
    assert to_uint8(np.zeros((2, 2))).max() == 0
    write_png(tmp_path / "a.png", img)
    data = (tmp_path / "a.png").read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    w, h = struct.unpack(">II", data[16:24])
    assert (w, h) == (2, 2)
    idat_len = struct.unpack(">I", data[33:37])[0]
    raw = zlib.decompress(data[41:41 + idat_len])
    assert raw == b"\x00\x00\x80\x00\xff\x00"
    with pytest.raises(ValueError):
        write_png(tmp_path / "b.png", np.zeros(3))
