import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patpd.diagnostics import (
    TABLE_REFERENCE_PSNR,
    DiagnosticsReport,
    adjoint_gap_stats,
    check_contraction,
    check_nonexpansive,
    check_prop1,
    measure_epsilon,
    nonexpansive_coefficient,
    psnr,
    snr_db,
    ssim,
)
from patpd.fast_ops import build_plan, dense_map, forward_map, inverse_map, reference_map
from patpd.reference_wave import assemble_dense
from patpd.variational import FixedPointTrace, SolverConfig


@pytest.fixture(scope="module")
def dense_ops(tiny_grid):
    plan = build_plan(tiny_grid)
    shp_i, shp_d = tiny_grid.image_shape, tiny_grid.data_shape
    inv = inverse_map(plan)
    Mi = assemble_dense(inv, shp_d)
    exact_adj = dense_map(Mi.T, shp_i, shp_d)  # forward whose transpose is exactly Ainv
    return inv, exact_adj, shp_i, shp_d


def positive_samples(shp_i, shp_d, n=20, seed=0):
    r = np.random.default_rng(seed)
    return [(r.random(shp_i), r.random(shp_d)) for _ in range(n)]


# epsilon of the adjoint-mismatch bound

def test_epsilon_zero_for_exact_adjoint(dense_ops):
    inv, exact_adj, shp_i, shp_d = dense_ops
    res = measure_epsilon(exact_adj, inv, positive_samples(shp_i, shp_d))
    assert res.epsilon <= 1e-12


def test_epsilon_scaled_map(dense_ops):
    inv, exact_adj, shp_i, shp_d = dense_ops
    res = measure_epsilon(lambda x: 1.2 * exact_adj(x), inv, positive_samples(shp_i, shp_d))
    assert abs(res.epsilon - 0.2) <= 1e-6


def test_epsilon_skips_non_positive(dense_ops):
    inv, exact_adj, shp_i, shp_d = dense_ops
    s = positive_samples(shp_i, shp_d, 5)
    s += [(-x, h) for x, h in s[:3]]
    res = measure_epsilon(exact_adj, inv, s)
    expected_skips = sum(np.sum(x * inv(h)) <= 0 for x, h in s)
    assert expected_skips >= 3
    assert res.skipped == expected_skips and res.used == 8 - expected_skips
    assert res.skip_rate == pytest.approx(expected_skips / 8)
    with pytest.raises(ValueError):
        measure_epsilon(exact_adj, inv, [(-x, h) for x, h in s[:3]])


# firm nonexpansiveness

def test_nonexpansive_zero_correction(dense_ops):
    inv, _, shp_i, shp_d = dense_ops
    pairs = [(x, 2 * x) for x, _ in positive_samples(shp_i, shp_d, 5)]
    res = check_nonexpansive(lambda x: np.zeros(shp_d), inv, 0.1, 0.1, 0.0, 2.0, pairs)
    assert res.worst_margin == 0.0 and res.passed


def test_nonexpansive_default_steps_pass(dense_ops, tiny_grid):
    inv, exact_adj, shp_i, shp_d = dense_ops
    fwd = forward_map(build_plan(tiny_grid))
    L = np.linalg.norm(assemble_dense(fwd, shp_i), 2)
    Li = np.linalg.norm(assemble_dense(inv, shp_d), 2)
    s = 1 / (10 * L)
    eps = measure_epsilon(exact_adj, inv, positive_samples(shp_i, shp_d)).epsilon
    r = np.random.default_rng(1)
    pairs = [(r.random(shp_i), r.random(shp_i)) for _ in range(100)]
    res = check_nonexpansive(exact_adj, inv, s, s, eps, Li, pairs)
    assert res.coefficient <= 1 and res.worst_margin >= -1e-8 and res.pairs == 100


def test_nonexpansive_huge_tau_fails(dense_ops):
    inv, exact_adj, shp_i, shp_d = dense_ops
    Li = np.linalg.norm(assemble_dense(inv, shp_d), 2)
    r = np.random.default_rng(2)
    pairs = [(r.random(shp_i), r.random(shp_i)) for _ in range(10)]
    res = check_nonexpansive(exact_adj, inv, 0.05, 50.0, 0.0, Li, pairs)
    assert not res.coefficient_ok and not res.passed


def test_coefficient_is_exact_arithmetic():
    assert nonexpansive_coefficient(0.5, 0.2, 0.4, 3.0) == 1.5 * 0.4 * 0.2 / 1.2 * 9.0


# contraction

def test_contraction_geometric():
    r = 0.5 ** np.arange(1, 41)
    c = check_contraction(r)
    assert c.slope < -2 and c.monotone_fraction == 1.0


def test_contraction_one_over_k():
    c = check_contraction(1.0 / np.arange(1, 101))
    assert abs(c.slope + 1) <= 0.05 and c.fit_points == 91


@given(p=st.floats(0.3, 3.0))
@settings(max_examples=30, deadline=None)
def test_contraction_recovers_power_rates(p):
    c = check_contraction(np.arange(1, 101) ** -p)
    assert abs(c.slope + p) <= 0.05


def test_contraction_dual_bound_and_trace():
    tr = FixedPointTrace()
    for k in range(1, 31):
        tr.record(1.0 / k, 2.0 if k < 5 else 1.0 / k, 0.0)
    c = check_contraction(tr)
    assert c.dual_bound == 2.0 and c.dual_bounded
    tr.dual_res[25] = 5.0
    assert not check_contraction(tr).dual_bounded
    with pytest.raises(ValueError):
        check_contraction(np.ones(10))


def test_contraction_floor_excludes_roundoff():
    r = np.r_[0.5 ** np.arange(1, 15), np.zeros(20)]
    c = check_contraction(r)
    assert c.fit_points == 5 and c.slope < -2


# image metrics

def test_psnr_examples():
    x = np.random.default_rng(0).random((10, 10))
    assert psnr(x, x) == math.inf
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(x, x[:5])
    with pytest.raises(ValueError):
        psnr(x, x, 0.0)


@given(seed=st.integers(0, 2**31), s=st.floats(0.01, 100))
@settings(max_examples=30, deadline=None)
def test_psnr_scale_invariant(seed, s):
    r = np.random.default_rng(seed)
    x, ref = r.random((8, 8)), r.random((8, 8))
    assert psnr(s * x, s * ref, s) == pytest.approx(psnr(x, ref, 1.0), rel=1e-9)


def ssim_oracle(x, ref, win=7, data_range=1.0, k1=0.01, k2=0.03):
    """Explicit loop over fully contained windows with unbiased statistics."""
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a = x[i:i + win, j:j + win].ravel()
            b = ref[i:i + win, j:j + win].ravel()
            va, vb = a.var(ddof=1), b.var(ddof=1)
            cab = np.cov(a, b, ddof=1)[0, 1]
            vals.append((2 * a.mean() * b.mean() + c1) * (2 * cab + c2)
                        / ((a.mean() ** 2 + b.mean() ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_window_loop():
    r = np.random.default_rng(3)
    x = r.random((12, 15))
    ref = np.clip(x + 0.2 * r.standard_normal(x.shape), 0, 1)
    assert ssim(x, ref) == pytest.approx(ssim_oracle(x, ref), abs=1e-12)


def test_ssim_examples():
    r = np.random.default_rng(4)
    x = r.random((20, 20))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    # separable 7-periodic pattern with zero-sum factors: every window has mean exactly 0
    u, v = r.standard_normal(7), r.standard_normal(7)
    z = np.outer(np.tile(u - u.mean(), 3), np.tile(v - v.mean(), 3))
    assert ssim(z, -z) < 0
    val = ssim(x, x + 0.01 * r.standard_normal(x.shape))
    assert 0.9 < val < 1.0
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))
    with pytest.raises(ValueError):
        ssim(x, x[:10])


@given(seed=st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_ssim_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((9, 11)), r.random((9, 11))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


def test_snr_examples():
    r = np.random.default_rng(5)
    clean = r.standard_normal(100)
    assert snr_db(clean, clean) == math.inf
    noise = r.standard_normal(100)
    noise *= np.sqrt(0.1 * np.sum(clean**2) / np.sum(noise**2))
    assert snr_db(clean, clean + noise) == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(ValueError):
        snr_db(np.zeros(3), np.ones(3))


def test_reference_table_values_recorded():
    assert TABLE_REFERENCE_PSNR == {"mcpd": 29.34, "pddeq": 22.1, "hybrid": 24.27}


# exact-adjoint shadow of the corrected iteration

def test_prop1_exact_operator_reproduces_iterates(tiny_grid):
    ref = reference_map(tiny_grid)
    M = assemble_dense(ref, tiny_grid.image_shape)
    acc = dense_map(M, tiny_grid.image_shape, tiny_grid.data_shape)
    r = np.random.default_rng(6)
    y = acc(r.random(tiny_grid.image_shape))
    samples = positive_samples(tiny_grid.image_shape, tiny_grid.data_shape, 5)
    L = np.linalg.norm(M, 2)
    cfg = SolverConfig(0.9 / L, 0.9 / L, 1.0, 50)
    res = check_prop1(lambda x: (M @ np.ravel(x)).reshape(tiny_grid.data_shape), acc, samples, y, cfg=cfg, lam=1e-3, op_norm=L)
    assert res.gap <= 1e-12 and res.max_deviation <= 1e-12
    fast = forward_map(build_plan(tiny_grid))
    bad = check_prop1(fast, acc, samples, y, cfg=cfg, lam=1e-3, op_norm=L)
    assert bad.gap > 1e-2 and bad.deviation_at(50) > 1e-2


def test_adjoint_gap_stats():
    A = np.arange(6.0).reshape(2, 3)
    pairs = [(np.ones(3), np.ones(2))]
    st_ = adjoint_gap_stats(lambda x: A @ x, lambda h: A.T @ h, pairs)
    assert st_["max"] == 0 and st_["count"] == 1


def test_report_text_and_curves(tmp_path):
    rep = DiagnosticsReport()
    rep.set("slope", -1.25)
    rep.update({"pairs": 100, "ok": True})
    rep.write(tmp_path / "r.txt")
    assert (tmp_path / "r.txt").read_text() == "slope=-1.25\npairs=100\nok=True\n"
    assert rep["pairs"] == 100
    DiagnosticsReport.write_curves(tmp_path / "c.csv", {"a": [1.0, 2.0], "b": [3.0]})
    assert (tmp_path / "c.csv").read_text().splitlines() == ["iter,a,b", "1,1.0,3.0", "2,2.0,"]
