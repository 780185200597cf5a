import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from helpers import gt_at
from legvio import checks, generate, scenarios
from legvio.geom import exp_so3, right_jacobian_so3
from legvio.preint_velocity import (
    TwistMeasurement,
    TwistNoiseSpec,
    compose_vel,
    integrate_twists,
    motion_of,
    new_vel_delta,
    vel_apply_bias_update,
    vel_integrate,
    vel_propagate_cov,
    vel_residual,
)
from legvio.states import State

seeds = st.integers(0, 2**32 - 1)


def constant(w, v, n, dt):
    return [TwistMeasurement(np.asarray(w, float), np.asarray(v, float), (k + 1) * dt) for k in range(n)]


def random_twists(rng, n, dt=0.0025):
    return [TwistMeasurement(rng.normal(scale=0.5, size=3), rng.normal(size=3) + [1, 0, 0], (k + 1) * dt)
            for k in range(n)]


def test_constant_velocity_sum():
    d = integrate_twists(constant([0, 0, 0], [1, 0, 0], 100, 0.01), 0.0)
    np.testing.assert_allclose(d.dp, [1, 0, 0], atol=1e-14)
    np.testing.assert_array_equal(d.dR, np.eye(3))
    assert motion_of(d) == pytest.approx((1.0, 0.0))


def test_bias_is_subtracted():
    d = integrate_twists(constant([0, 0, 0], [1, 0, 0], 100, 0.01), 0.0, [0, 0, 0, 0.1, 0, 0])
    np.testing.assert_allclose(d.dp, [0.9, 0, 0], atol=1e-14)


def test_quarter_circle_matches_dense_oracle():
    d = integrate_twists(constant([0, 0, np.pi / 2], [1, 0, 0], 400, 0.0025), 0.0)
    # zero-order hold oracle at dt = 1e-5 (vectorised: heading before each step)
    n = 100_000
    heading = (np.pi / 2) * np.arange(n) / n
    dense = np.array([np.cos(heading).sum(), np.sin(heading).sum(), 0.0]) / n
    np.testing.assert_allclose(d.dp, dense, atol=5e-3)
    # closed-form 400 Hz sum with the heading held before each step
    np.testing.assert_allclose(d.dp, [0.6378689542, 0.6353689542, 0.0], atol=1e-9)
    np.testing.assert_allclose(d.dR, exp_so3([0, 0, np.pi / 2]), atol=1e-12)


def test_bias_update_examples():
    d = integrate_twists(constant([0, 0, 0], [1, 0, 0], 100, 0.01), 0.0)
    dR, dp = vel_apply_bias_update(d, np.zeros(6))
    np.testing.assert_array_equal(dR, d.dR)
    np.testing.assert_array_equal(dp, d.dp)
    _, dp = vel_apply_bias_update(d, [0, 0, 0, 0.01, 0, 0])
    np.testing.assert_allclose(dp - d.dp, [-0.01, 0, 0], atol=1e-14)


def test_bias_linearity_is_exact():
    rng = np.random.default_rng(1)
    tw = random_twists(rng, 50)
    bv = np.array([0.02, -0.01, 0.03])
    shifted = [TwistMeasurement(m.ang_vel, m.lin_vel - bv, m.stamp) for m in tw]
    a = integrate_twists(tw, 0.0, np.concatenate([np.zeros(3), bv]))
    b = integrate_twists(shifted, 0.0)
    np.testing.assert_allclose(a.dp, b.dp, atol=1e-12)


def test_rejects_bad_stamps():
    d = vel_integrate(new_vel_delta(), constant([0, 0, 0], [1, 0, 0], 1, 0.01)[0], 0.01)
    with pytest.raises(ValueError):
        vel_integrate(d, constant([0, 0, 0], [1, 0, 0], 1, 0.01)[0], 0.01)
    with pytest.raises(ValueError):
        TwistNoiseSpec(lin_sigma=-1.0)


def test_residual_zero_on_simulated_ground_truth_and_perturbation():
    ds = generate(scenarios.noise_free(duration=2.0, kind="loop"))
    cs = ds.camera_stamps
    gt = gt_at(ds, cs)
    tw = ds.twist_measurements()
    edges = np.searchsorted(ds.twist_stamps, cs, side="right")
    for k in range(1, len(cs)):
        d = integrate_twists(tw[edges[k - 1]:edges[k]], cs[k - 1])
        assert np.linalg.norm(vel_residual(gt.state(k - 1), gt.state(k), d, jacobians=False)) < 1e-8
    xi, xj = gt.state(0), gt.state(1)
    eps = 1e-3
    moved = State(xj.rotation, xj.position + xi.rotation @ [eps, 0, 0], xj.velocity, xj.biases)
    r0 = vel_residual(xi, xj, d, jacobians=False)
    r1 = vel_residual(xi, moved, d, jacobians=False)
    np.testing.assert_allclose(r1[3:] - r0[3:], [eps, 0, 0], atol=1e-15)


def test_jacobians_match_finite_differences():
    assert checks.run_suite("velocity", trials=30, seed=2, tol=1e-5).passed


def test_covariance_examples():
    zero = np.zeros((6, 6))
    noise = TwistNoiseSpec()
    bias = np.array([0, 0, 0, 1.0, 0, 0])
    # with w = 0 and v = b_v the transition is the identity
    P = np.diag(np.arange(1.0, 7.0))
    dt = 0.01
    out = vel_propagate_cov(P, [0, 0, 0], [1, 0, 0], bias, np.eye(3), dt, noise)
    B = np.zeros((6, 6))
    B[:3, :3] = np.eye(3) * dt
    B[3:, 3:] = np.eye(3) * dt
    np.testing.assert_allclose(out, P + B @ noise.eta_cov() @ B.T, atol=1e-15)
    # one step from zero covariance is B S B^T exactly
    w = np.array([0.3, 0.1, -0.2])
    dR = exp_so3([0.1, 0.2, 0.3])
    out = vel_propagate_cov(zero, w, [1, 0, 0], np.zeros(6), dR, dt, noise)
    B[:3, :3] = right_jacobian_so3(w * dt) * dt
    B[3:, 3:] = dR * dt
    np.testing.assert_allclose(out, B @ noise.eta_cov() @ B.T, atol=1e-18)


def test_covariance_psd_and_growing():
    rng = np.random.default_rng(3)
    d = new_vel_delta()
    noise = TwistNoiseSpec()
    trace = 0.0
    for m in random_twists(rng, 80):
        d = vel_integrate(d, m, m.stamp - d.last_stamp, noise)
        np.testing.assert_array_equal(d.cov, d.cov.T)
        assert np.linalg.eigvalsh(d.cov).min() >= -1e-12
        assert np.trace(d.cov) >= trace
        trace = np.trace(d.cov)


def test_constant_bias_drift_is_linear():
    # straight line: the position error grows by |b_v| per second
    for T in (1.0, 2.0, 4.0):
        n = int(T / 0.01)
        a = integrate_twists(constant([0, 0, 0], [1, 0, 0.03], n, 0.01), 0.0)
        assert a.dp[2] == pytest.approx(0.03 * T, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 58))
def test_composition(seed, split):
    tw = random_twists(np.random.default_rng(seed), 60)
    whole = integrate_twists(tw, 0.0)
    a = integrate_twists(tw[:split], 0.0)
    b = integrate_twists(tw[split:], tw[split - 1].stamp)
    dR, dp, T = compose_vel(a, b)
    np.testing.assert_allclose(dR, whole.dR, atol=1e-9)
    np.testing.assert_allclose(dp, whole.dp, atol=1e-9)
    assert T == pytest.approx(whole.dt)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_bias_correction_error_is_quadratic(seed):
    rng = np.random.default_rng(seed)
    tw = random_twists(rng, 40)
    ref = integrate_twists(tw, 0.0)
    db = rng.normal(size=6)
    db *= 0.05 / np.linalg.norm(db)

    def err(step):
        dR, dp = vel_apply_bias_update(ref, step)
        full = integrate_twists(tw, 0.0, step)
        rot = Rotation.from_matrix(dR.T @ full.dR).as_rotvec()
        return np.linalg.norm(np.concatenate([rot, dp - full.dp]))

    assert 3.5 <= err(db) / err(db / 2) <= 4.5


def test_bias_correction_small_step_matches_recompute():
    rng = np.random.default_rng(8)
    tw = random_twists(rng, 40)
    ref = integrate_twists(tw, 0.0)
    db = np.full(6, 1e-3)
    dR, dp = vel_apply_bias_update(ref, db)
    full = integrate_twists(tw, 0.0, db)
    assert np.abs(dp - full.dp).max() < 1e-6
    assert np.abs(dR - full.dR).max() < 1e-6
