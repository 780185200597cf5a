import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legvio.evaluation import (
    align_rigid,
    altitude_error,
    ate_aligned,
    evaluate,
    fit_linear_drift,
    plot_report,
    rpe,
)
from legvio.geom import exp_so3
from legvio.trajectory import Trajectory


def straight(T=30.0, rate=10.0, drift=0.0):
    t = np.arange(0, T + 1e-9, 1 / rate)
    pos = np.column_stack([t, np.zeros_like(t), drift * t])
    return Trajectory(t, np.tile(np.eye(3), (len(t), 1, 1)), pos)


def wavy(n=300, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 0.1
    pos = np.column_stack([t, np.sin(0.3 * t) * 3, 0.2 * np.cos(0.5 * t)])
    R = np.array([exp_so3([0.0, 0.0, 0.3 * np.cos(0.3 * s)]) @ exp_so3(0.01 * rng.normal(size=3)) for s in t])
    return Trajectory(t, R, pos)


def moved(traj, R, p):
    return Trajectory(traj.stamps, R @ traj.rotations, traj.positions @ R.T + p)


def test_rpe_of_identical_trajectories_is_zero():
    gt = wavy()
    rep = rpe(gt, gt, 10.0)
    assert not rep.empty and rep.errors.max() < 1e-12


def test_rpe_ignores_constant_offsets():
    gt = wavy()
    est = Trajectory(gt.stamps, gt.rotations, gt.positions + [5.0, -2.0, 1.0])
    assert rpe(est, gt, 10.0).errors.max() < 1e-12


def test_rpe_of_vertical_drift():
    gt = straight()
    est = straight(drift=0.03)
    rep = rpe(est, gt, 10.0)
    np.testing.assert_allclose(rep.errors, 0.3, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_metrics_invariant_to_rigid_transforms(w, p):
    gt = wavy(120)
    est = Trajectory(gt.stamps, gt.rotations, gt.positions + 0.01 * np.sin(np.arange(120))[:, None])
    base = rpe(est, gt, 5.0).errors
    R = exp_so3(w)
    np.testing.assert_allclose(rpe(moved(est, R, p), gt, 5.0).errors, base, atol=1e-9)
    assert ate_aligned(moved(est, R, p), gt) == pytest.approx(ate_aligned(est, gt), abs=1e-9)


def umeyama(src, dst):
    ms, md = src.mean(0), dst.mean(0)
    U, _, Vt = np.linalg.svd((dst - md).T @ (src - ms))
    D = np.diag([1, 1, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return R, md - R @ ms


def test_ate_matches_svd_oracle():
    rng = np.random.default_rng(2)
    gt = wavy()
    est = moved(Trajectory(gt.stamps, gt.rotations, gt.positions + 0.05 * rng.normal(size=gt.positions.shape)),
                exp_so3([0.3, -0.2, 1.0]), [1, 2, 3])
    R, t = umeyama(est.positions, gt.positions)
    d = gt.positions - (est.positions @ R.T + t)
    ref = np.sqrt(np.mean(np.sum(d * d, axis=1)))
    assert ate_aligned(est, gt) == pytest.approx(ref, rel=1e-9)
    Ra, ta = align_rigid(est.positions, gt.positions)
    np.testing.assert_allclose(Ra, R, atol=1e-9)
    np.testing.assert_allclose(ta, t, atol=1e-9)


def test_ate_of_white_noise():
    rng = np.random.default_rng(3)
    gt = wavy(3000)
    est = Trajectory(gt.stamps, gt.rotations, gt.positions + 0.02 * rng.normal(size=gt.positions.shape))
    assert ate_aligned(est, gt) == pytest.approx(0.02 * np.sqrt(3), rel=0.05)


def test_drift_fit():
    t = np.linspace(0, 10, 50)
    fit = fit_linear_drift(t, 0.03 * t + 0.1)
    assert fit.slope == pytest.approx(0.03) and fit.intercept == pytest.approx(0.1) and fit.r2 == pytest.approx(1.0)
    noise = np.random.default_rng(4).normal(size=2000)
    fit = fit_linear_drift(np.linspace(0, 100, 2000), noise)
    assert abs(fit.slope) < 2e-3 and fit.r2 < 0.01
    assert fit_linear_drift(t, np.zeros(50)).r2 == 1.0
    with pytest.raises(ValueError):
        fit_linear_drift(t[:9], t[:9])


def test_short_trajectory_gives_empty_report():
    gt = straight(T=3.0)
    rep = rpe(gt, gt, 10.0)
    assert rep.empty and np.isnan(rep.mean)
    assert rep.as_dict()["count"] == 0
    out = evaluate(gt, gt, 10.0)
    assert out["rpe"]["empty"] and out["ate"] == pytest.approx(0.0, abs=1e-12)


def test_altitude_error_and_summary():
    gt, est = straight(), straight(drift=0.03)
    t, dz = altitude_error(est, gt)
    np.testing.assert_allclose(dz, 0.03 * t)
    out = evaluate(est, gt)
    assert out["altitude_drift"]["slope"] == pytest.approx(0.03)
    with pytest.raises(ValueError):
        rpe(gt, gt, 0.0)


def test_plot_report_writes_files(tmp_path):
    gt = straight()
    paths = plot_report(gt, gt, tmp_path, gt.stamps, np.zeros((len(gt), 12)))
    assert sorted(p.split("/")[-1] for p in paths) == ["altitude.svg", "bias.svg", "trajectory.svg"]
    assert all((tmp_path / p.split("/")[-1]).stat().st_size > 0 for p in paths)
