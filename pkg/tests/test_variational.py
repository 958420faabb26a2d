import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patpd.fast_ops import build_plan, dense_map, forward_map
from patpd.reference_wave import assemble_dense
from patpd.variational import (
    DivergenceError,
    FixedPointTrace,
    SolverConfig,
    StepSizeWarning,
    VariationalProblem,
    dual_prox,
    objective,
    pdhg,
    prox,
    proximal_gradient,
    read_trace_csv,
)

from conftest import rel


@pytest.fixture(scope="module")
def dense_problem(tiny_grid):
    """Dense fast forward on the 8 x 8 grid with noiseless data."""
    m = assemble_dense(forward_map(build_plan(tiny_grid)), tiny_grid.image_shape)
    op = dense_map(m, tiny_grid.image_shape, tiny_grid.data_shape)
    x_true = np.random.default_rng(0).random(tiny_grid.image_shape)
    return m, op, op(x_true), np.linalg.norm(m, 2)


def normal_equations(m, y, lam):
    return np.linalg.solve(m.T @ m + 2 * lam * np.eye(m.shape[1]), m.T @ y.ravel())


def test_prox_examples():
    assert np.array_equal(prox("nonneg", 1.0, np.array([-1.0, 2.0])), [0.0, 2.0])
    assert np.allclose(prox("l1", 0.5, np.array([0.3, -2.0])), [0.0, -1.5])
    assert np.allclose(prox("l2", 0.5, np.array([4.0])), [2.0])
    with pytest.raises(ValueError):
        prox("tv", 1.0, np.zeros(2))
    with pytest.raises(ValueError):
        prox("l1", -1.0, np.zeros(2))


def test_dual_prox_examples():
    assert dual_prox(0.0, 0.0, 0.3) == 0.0
    assert dual_prox(1.0, 1.0, 1.0) == 1.0
    assert dual_prox(0.0, 2.0, 1.0) == 1.0


@pytest.mark.parametrize("reg", ["nonneg", "l2", "l1"])
@given(seed=st.integers(0, 2**31), w=st.floats(0, 5))
@settings(max_examples=20, deadline=None)
def test_prox_firmly_nonexpansive(reg, seed, w):
    r = np.random.default_rng(seed)
    for _ in range(5):
        a, b = r.standard_normal((2, 10)) * 3
        pa, pb = prox(reg, w, a), prox(reg, w, b)
        d = pa - pb
        assert d @ d <= d @ (a - b) + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(sigma=0)
    with pytest.raises(ValueError):
        SolverConfig(theta=1.5)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(memory=0)


def test_problem_validation(dense_problem):
    _, op, y, _ = dense_problem
    with pytest.raises(ValueError):
        VariationalProblem(op, y, reg="tv")
    with pytest.raises(ValueError):
        VariationalProblem(op, y, lam=-1)
    with pytest.raises(ValueError):
        VariationalProblem(op, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        VariationalProblem(lambda x: x, y)


def test_proximal_gradient_identity():
    ident = dense_map(np.eye(16), (4, 4), (4, 4))
    y = np.random.default_rng(1).standard_normal((4, 4))
    x, tr = proximal_gradient(VariationalProblem(ident, y, "l2", 0.0), SolverConfig(max_iter=200),
                              np.zeros((4, 4)))
    assert np.linalg.norm(x - y) <= 1e-8


def test_proximal_gradient_matches_normal_equations(dense_problem):
    m, op, y, L = dense_problem
    lam = 0.05
    x, tr = proximal_gradient(VariationalProblem(op, y, "l2", lam), SolverConfig(max_iter=20000, tol=1e-14),
                              np.zeros(op.in_shape), op_norm=L)
    assert rel(x.ravel(), normal_equations(m, y, lam)) <= 1e-6
    obj = np.array(tr.objective)
    assert np.all(np.diff(obj) <= 1e-12 * np.abs(obj[:-1]))


def test_proximal_gradient_from_optimum(dense_problem):
    m, op, y, L = dense_problem
    lam = 0.05
    xo = normal_equations(m, y, lam).reshape(op.in_shape)
    _, tr = proximal_gradient(VariationalProblem(op, y, "l2", lam), SolverConfig(max_iter=5), xo,
                              op_norm=L)
    assert max(tr.primal_res) <= 1e-10


def test_proximal_gradient_detects_divergence(dense_problem):
    _, op, y, L = dense_problem
    with pytest.raises(DivergenceError) as err:
        proximal_gradient(VariationalProblem(op, y, "l2", 0.0), SolverConfig(max_iter=200),
                          np.zeros(op.in_shape), step=3.0 / L**2)
    assert err.value.trace.unstable and len(err.value.trace) >= 5


def test_pdhg_matches_normal_equations(dense_problem):
    m, op, y, L = dense_problem
    lam = 1e-4
    s = np.sqrt(0.9) / L
    x, _, tr = pdhg(VariationalProblem(op, y, "l2", lam), SolverConfig(s, s, 1.0, 5000),
                    np.zeros(op.in_shape), op_norm=L)
    assert rel(x.ravel(), normal_equations(m, y, lam)) <= 1e-5
    assert not tr.unstable and len(tr) == 5000


def test_pdhg_step_size_warning(dense_problem):
    _, op, y, L = dense_problem
    s = 2.0 / L
    with pytest.warns(StepSizeWarning):
        try:
            _, _, tr = pdhg(VariationalProblem(op, y, "l2", 1e-4), SolverConfig(s, s, 1.0, 50),
                            np.zeros(op.in_shape), op_norm=L)
            assert tr.unstable
        except DivergenceError as exc:
            assert exc.trace.unstable


def test_pdhg_saddle_point_is_fixed(dense_problem):
    m, op, y, L = dense_problem
    lam = 1e-2
    xo = normal_equations(m, y, lam).reshape(op.in_shape)
    qo = op(xo) - y
    s = 0.9 / L
    _, _, tr = pdhg(VariationalProblem(op, y, "l2", lam), SolverConfig(s, s, 1.0, 5), xo, qo,
                    op_norm=L)
    assert max(tr.primal_res) <= 1e-8 and max(tr.dual_res) <= 1e-8


def test_pdhg_nonneg_stays_feasible(dense_problem):
    _, op, y, L = dense_problem
    s = 0.9 / L
    x, _, tr = pdhg(VariationalProblem(op, y, "nonneg"), SolverConfig(s, s, 1.0, 200),
                    np.zeros(op.in_shape), op_norm=L)
    assert x.min() >= 0 and np.isfinite(objective(VariationalProblem(op, y, "nonneg"), x))


def test_pdhg_non_finite(dense_problem):
    _, op, y, L = dense_problem
    bad = VariationalProblem(lambda x: op(x) * np.inf, y, adjoint=op.adjoint)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DivergenceError):
            pdhg(bad, SolverConfig(max_iter=3), np.ones(op.in_shape), op_norm=1.0)


def test_trace_csv_roundtrip(tmp_path):
    tr = FixedPointTrace()
    for k in range(1, 6):
        tr.record(1.0 / k, 2.0 / k, 3.0 / k)
    tr.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iter,primal_res,dual_res,objective"
    back = read_trace_csv(tmp_path / "t.csv")
    assert back.primal_res == tr.primal_res and back.objective == tr.objective
