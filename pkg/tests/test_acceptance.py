"""Acceptance criteria, each at its stated tolerance."""

import math
import time

import numpy as np
import pytest

from flowcalib import cli, io
from flowcalib.camera import PointCloud, default_intrinsics
from flowcalib.correlation import build_correlation_volume, build_pyramid
from flowcalib.flow import FlowField, flow_loss, normalize_uncertainty
from flowcalib.geometry import PerturbRange, make_rng, sample_perturbation
from flowcalib.gradcheck import TOLERANCE, run_gradcheck
from flowcalib.metrics import REFERENCE_MEAN_ROW, CalibrationError, calibration_error, flow_error, format_table
from flowcalib.metrics import uncertainty_regression
from flowcalib.sim import NoiseConfig, SceneConfig, make_experiment
from flowcalib.solver import correspondences_from_flow, solve_gated, solve_weighted

K = default_intrinsics()
RANGE = PerturbRange.from_degrees(0.10, 5.0)


def test_1_exact_recovery(acceptance):
    start = time.perf_counter()
    worst_t = worst_r = 0.0
    for seed in range(100):
        ex = make_experiment(SceneConfig(), NoiseConfig(), RANGE, K, seed=seed)
        cs = correspondences_from_flow(ex.depth, ex.cloud, ex.flow_noisy, K)
        err = calibration_error(solve_weighted(ex.T_init, cs, K).estimate(ex.T_init), ex.T_gt)
        worst_t, worst_r = max(worst_t, err.e_t), max(worst_r, err.e_r)
    elapsed = time.perf_counter() - start
    ok = worst_t < 1e-6 and worst_r < 1e-6 and elapsed < 60
    acceptance("1 exact recovery", ok,
               f"100 experiments, worst E_t={worst_t:.2e} cm, E_r={worst_r:.2e} deg, {elapsed:.1f} s")
    assert ok


def test_2_gated_robustness(acceptance):
    noise = dict(flow_sigma=0.3, outlier_fraction=0.2, outlier_magnitude=50.0, uncertainty_informative=True)
    gated, plain = [], []
    for seed in range(100):
        ex = make_experiment(SceneConfig(), NoiseConfig(**noise), RANGE, K, seed=seed)
        cs = correspondences_from_flow(ex.depth, ex.cloud, ex.flow_noisy, K)
        nq = cs.sample(normalize_uncertainty(ex.flow_noisy).q)
        rep_g = solve_gated(ex.T_init, cs, K, nq, 0.5)
        rep_u = solve_weighted(ex.T_init, cs.with_weights(np.ones(len(cs))), K)
        gated.append(calibration_error(rep_g.estimate(ex.T_init), ex.T_gt))
        plain.append(calibration_error(rep_u.estimate(ex.T_init), ex.T_gt))
    gt_t, gt_r = np.median([e.e_t for e in gated]), np.median([e.e_r for e in gated])
    un_t, un_r = np.median([e.e_t for e in plain]), np.median([e.e_r for e in plain])
    ok = gt_t < 0.1 and gt_r < 0.01 and un_t >= 10 * gt_t and un_r >= 10 * gt_r
    acceptance("2 gated robustness", ok,
               f"gated median E_t={gt_t:.4f} cm E_r={gt_r:.5f} deg; ungated {un_t:.3f} cm {un_r:.4f} deg "
               f"({un_t / gt_t:.0f}x, {un_r / gt_r:.0f}x)")
    assert ok


def test_3_gradcheck(acceptance, capsys):
    code = cli.main(["gradcheck", "--seed", "0", "--instances", "50"])
    capsys.readouterr()
    worst = max(r.max_rel_error for r in run_gradcheck(0, 50))
    ok = code == 0 and worst < TOLERANCE
    acceptance("3 differentiability", ok, f"50 instances, max relative error {worst:.2e}, exit code {code}")
    assert ok


def _argmin_refined(fn, lo, hi, rounds=6, n=201):
    for _ in range(rounds):
        grid = np.linspace(lo, hi, n)
        k = int(np.argmin([fn(x) for x in grid]))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n - 1)]
    return float(grid[k])


def _loss_optimum(e):
    gt = FlowField.zeros((1, 1))
    term = lambda q: flow_loss([FlowField(np.array([[e]]), np.zeros((1, 1)), np.array([[q]]),  # noqa: E731
                                          np.ones((1, 1), bool))], gt, 1.0)
    return _argmin_refined(term, 0.01, 12.0)


@pytest.mark.xfail(strict=True, reason="Q*e + 1/Q is minimised at Q = 1/sqrt(e), not 1/e; see decisions ledger")
def test_4_flow_loss_optimum(acceptance):
    errors = (0.37, 1.0, 2.5)
    found = {e: _loss_optimum(e) for e in errors}
    gap = max(abs(found[e] - 1 / e) for e in errors)
    ok = gap < 1e-6
    acceptance("4 flow-loss optimum", ok,
               "grid argmin vs Q=1/e: " + ", ".join(f"e={e}: {found[e]:.6f} vs {1 / e:.6f}" for e in errors)
               + f" (max gap {gap:.2e}; analytic optimum is 1/sqrt(e))")
    assert ok


def test_4_flow_loss_optimum_analytic():
    # what the grid search does agree with
    for e in (0.37, 1.0, 2.5):
        assert _loss_optimum(e) == pytest.approx(1 / math.sqrt(e), abs=1e-6)


def _loop_volume(a, b):
    H, W, _ = a.shape
    out = np.zeros((H, W, H, W))
    for i in range(H):
        for j in range(W):
            for k in range(H):
                for m in range(W):
                    out[i, j, k, m] = sum(float(x) * float(y) for x, y in zip(a[i, j], b[k, m]))
    return out


def test_5_correlation_pyramid(acceptance):
    rng = np.random.default_rng(0)
    exact, worst_rel = True, 0.0
    for _ in range(10):
        # integer-valued features make every dot product exact in floating point
        a = rng.integers(-8, 9, (16, 16, 4)).astype(float)
        b = rng.integers(-8, 9, (16, 16, 4)).astype(float)
        vol = build_correlation_volume(a, b)
        exact &= bool(np.array_equal(vol, _loop_volume(a, b)))
        pyr = build_pyramid(vol)
        for k in range(1, len(pyr)):
            prev = pyr.levels[k - 1]
            h, w = prev.shape[2] // 2, prev.shape[3] // 2
            blocks = np.empty(prev.shape[:2] + (h, w))
            for r in range(h):
                for c in range(w):
                    blocks[:, :, r, c] = prev[:, :, 2 * r:2 * r + 2, 2 * c:2 * c + 2].mean(axis=(2, 3))
            rel = np.max(np.abs(pyr.levels[k] - blocks)) / max(np.max(np.abs(blocks)), 1e-300)
            worst_rel = max(worst_rel, float(rel))
    ok = exact and worst_rel < 1e-6
    acceptance("5 correlation pyramid", ok, f"10 pairs, volume exact={exact}, worst pooled rel error {worst_rel:.1e}")
    assert ok


def test_6_uncertainty_regression(acceptance):
    noise = NoiseConfig(flow_sigma=0.5, sigma_spread=0.6, outlier_fraction=0.05, outlier_magnitude=20.0)
    ex = make_experiment(SceneConfig(n_points=3000), noise, RANGE, K, seed=11)
    e_f = flow_error(ex.flow_noisy, ex.flow_gt)
    qn = normalize_uncertainty(ex.flow_noisy).q
    m = ex.flow_noisy.valid & ex.flow_gt.valid
    res = uncertainty_regression(e_f[m], qn[m])
    n = int(m.sum())
    ok = n >= 1000 and res.slope > 0 and res.p_value < 0.01
    acceptance("6 uncertainty-error correlation", ok,
               f"n={n}, slope={res.slope:.3f}, R^2={res.r_squared:.3f}, p={res.p_value:.1e}")
    assert ok


def test_7_metric_identities(acceptance):
    rng = make_rng(7)
    worst = 0.0
    zero = 0.0
    big = PerturbRange(2.0, math.radians(80))
    for _ in range(1000):
        A, B = sample_perturbation(big, rng), sample_perturbation(big, rng)
        e = calibration_error(A, B)
        worst = max(worst, abs(e.e_t - math.sqrt(e.e_x**2 + e.e_y**2 + e.e_z**2)),
                    abs(e.e_r - math.sqrt(e.e_roll**2 + e.e_pitch**2 + e.e_yaw**2)))
        zero = max(zero, max(calibration_error(A, A).as_tuple()))
    ok = worst < 1e-9 and zero < 1e-12
    acceptance("7 metric identities", ok, f"1000 pairs, worst identity gap {worst:.1e}, worst self-error {zero:.1e}")
    assert ok


def test_8_io_round_trips(acceptance, tmp_path):
    import struct

    rng = make_rng(8)
    ext_ok = True
    for k in range(50):
        T = sample_perturbation(PerturbRange(3.0, 3.0), rng)
        io.write_extrinsic(T, tmp_path / "a.txt")
        io.write_extrinsic(io.read_extrinsic(tmp_path / "a.txt"), tmp_path / "b.txt")
        ext_ok &= (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        ext_ok &= bool(np.allclose(io.read_extrinsic(tmp_path / "a.txt").matrix(), T.matrix(), atol=1e-12, rtol=0))

    ex = make_experiment(SceneConfig(n_points=800), NoiseConfig(flow_sigma=0.5, outlier_fraction=0.1), RANGE, K, 8)
    io.write_flow(ex.flow_noisy, tmp_path / "a.dxqf")
    io.write_flow(io.read_flow(tmp_path / "a.dxqf"), tmp_path / "b.dxqf")
    flow_ok = (tmp_path / "a.dxqf").read_bytes() == (tmp_path / "b.dxqf").read_bytes()

    (tmp_path / "v.bin").write_bytes(struct.pack("<8f", 1.0, 2.0, 3.0, 0.5, -4.25, 0.0, 12.5, 1.0))
    cloud = io.read_point_cloud(tmp_path / "v.bin")
    velo_ok = (np.array_equal(cloud.points, [[1, 2, 3], [-4.25, 0, 12.5]])
               and np.array_equal(cloud.intensity, [0.5, 1.0]))
    io.write_point_cloud(PointCloud(cloud.points, cloud.intensity), tmp_path / "w.bin")
    velo_ok &= (tmp_path / "w.bin").read_bytes() == (tmp_path / "v.bin").read_bytes()

    ok = ext_ok and flow_ok and velo_ok
    acceptance("8 io round-trips", ok, f"extrinsic={ext_ok}, flow={flow_ok}, velodyne fixture={velo_ok}")
    assert ok


def test_9_reference_table_not_reproduced(acceptance):
    ref = CalibrationError(*REFERENCE_MEAN_ROW)
    row = format_table([("Mean", ref)]).splitlines()[-1].split()
    ok = row[1] == "1.425" and row[5] == "0.084"
    acceptance("9 reference table", ok,
               "declared not reproducible (needs trained network weights and KITTI data); "
               "reference row only checked as a layout fixture")
    assert ok
