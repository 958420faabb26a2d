import numpy as np
import pytest

from patpd.core import GridError, full_grid
from patpd.reference_wave import DENSE_CAP, adjoint_forward, assemble_dense, simulate_forward, wave_plan

from conftest import rel


@pytest.fixture(scope="module")
def dense8(tiny_grid):
    return assemble_dense(lambda x: simulate_forward(x, tiny_grid), tiny_grid.image_shape)


def test_zero_in_zero_out(tiny_grid):
    assert not np.any(simulate_forward(np.zeros(tiny_grid.image_shape), tiny_grid))
    assert not np.any(adjoint_forward(np.zeros(tiny_grid.data_shape), tiny_grid))


def test_point_source_time_of_flight():
    g = full_grid()
    x = np.zeros(g.image_shape)
    x[20, 64] = 1.0
    y = simulate_forward(x, g)
    expected = round(20 * g.dx / (g.c * g.dt))
    assert abs(int(np.argmax(np.abs(y[:, 64]))) - expected) <= 2


def test_linearity(small_grid, rng):
    x1, x2 = rng.random((2, *small_grid.image_shape))
    y = simulate_forward(2.0 * x1 - 0.5 * x2, small_grid)
    ref = 2.0 * simulate_forward(x1, small_grid) - 0.5 * simulate_forward(x2, small_grid)
    assert rel(y, ref) <= 1e-10


def test_causality_of_smooth_source():
    # band-limited source (Gaussian, 4 px) truncated below 1e-16
    g = full_grid()
    zz, xx = np.mgrid[: g.nz, : g.nx]
    x = np.exp(-((zz - 50) ** 2 + (xx - 64) ** 2) / 32.0)
    x[x < 1e-16] = 0
    depth = int(np.min(np.nonzero(x)[0]))
    y = simulate_forward(x, g)
    t_first = int(0.8 * depth * g.dx / (g.c * g.dt))
    assert np.max(np.abs(y[:t_first])) <= 1e-12 * np.max(np.abs(y))


def test_assemble_identity_and_zero():
    assert np.array_equal(assemble_dense(lambda x: x, (2, 2)), np.eye(4))
    assert not np.any(assemble_dense(lambda x: 0 * x, (2, 2)))


def test_assemble_cap():
    with pytest.raises(ValueError):
        assemble_dense(lambda x: x, (65, 64), cap=DENSE_CAP)


def test_dense_matches_direct(tiny_grid, dense8, rng):
    assert dense8.shape == (16 * 8, 64)
    x = rng.standard_normal(tiny_grid.image_shape)
    direct = simulate_forward(x, tiny_grid).ravel()
    assert rel(dense8 @ x.ravel(), direct) <= 1e-12


def test_adjoint_matches_transpose(tiny_grid, dense8, rng):
    x = rng.standard_normal(tiny_grid.image_shape)
    h = rng.standard_normal(tiny_grid.data_shape)
    lhs = np.vdot(simulate_forward(x, tiny_grid), h)
    rhs = np.vdot(x, adjoint_forward(h, tiny_grid))
    assert abs(lhs - rhs) <= 1e-8 * abs(lhs)
    assert rel(adjoint_forward(h, tiny_grid).ravel(), dense8.T @ h.ravel()) <= 1e-10


def test_adjoint_on_16x16():
    g = full_grid().with_shape(16, 16, 32)
    rng = np.random.default_rng(3)
    x, h = rng.standard_normal(g.image_shape), rng.standard_normal(g.data_shape)
    lhs = np.vdot(simulate_forward(x, g), h)
    assert abs(lhs - np.vdot(x, adjoint_forward(h, g))) <= 1e-10 * np.linalg.norm(h) * np.linalg.norm(
        simulate_forward(x, g))


def test_normal_matrix_psd(dense8):
    ata = dense8.T @ dense8
    assert np.allclose(ata, ata.T, atol=1e-12 * np.abs(ata).max())
    assert np.min(np.linalg.eigvalsh(ata)) >= -1e-10 * np.max(np.linalg.eigvalsh(ata))


def test_damping_mask_range(small_grid):
    plan = wave_plan(small_grid)
    assert np.all(plan.mask > 0) and np.all(plan.mask <= 1)
    assert plan.shape[0] >= small_grid.nz + 2 * plan.pad
    assert np.isclose(plan.mask.min(), 0.90)


def test_errors(tiny_grid):
    with pytest.raises(ValueError):
        simulate_forward(np.full(tiny_grid.image_shape, np.nan), tiny_grid)
    with pytest.raises(ValueError):
        adjoint_forward(np.zeros((3, 3)), tiny_grid)
