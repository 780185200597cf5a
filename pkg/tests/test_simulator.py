import numpy as np
import pytest

from helpers import interval_residuals, stereo_residuals
from legvio import generate, scenarios
from legvio.preint_velocity import TwistNoiseSpec
from legvio.simulator import BiasSchedule, SimConfig, TrajectorySpec, dead_reckon, initial_state


def cfg(kind="straight", duration=3.0, **kw):
    spec = kw.pop("spec", {})
    return SimConfig(trajectory=TrajectorySpec(kind=kind, duration=duration, **spec), **kw)


@pytest.mark.parametrize("kind", ["loop", "straight", "figure_eight"])
def test_noise_free_measurements_are_consistent(kind):
    ds = generate(cfg(kind, 2.0, camera_rate=10.0, noise_free=True,
                      spec={"bounce_amplitude": 0.02, "sway_amplitude": 0.03}))
    imu, vel = interval_residuals(ds)
    assert imu < 1e-8 and vel < 1e-8
    assert stereo_residuals(ds).max() < 1e-8


def test_same_seed_same_data():
    a = generate(cfg("loop", seed=3))
    b = generate(cfg("loop", seed=3))
    c = generate(cfg("loop", seed=4))
    for name in ("imu_gyro", "imu_accel", "twist_lin", "stereo", "landmark_positions"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.imu_gyro, c.imu_gyro)


def test_straight_line_twist():
    ds = generate(cfg("straight", noise_free=True))
    np.testing.assert_allclose(ds.twist_lin, np.tile([1.0, 0, 0], (len(ds.twist_lin), 1)), atol=1e-12)
    np.testing.assert_allclose(ds.twist_ang, 0.0, atol=1e-12)
    np.testing.assert_allclose(ds.imu_accel, np.tile([0, 0, 9.81], (len(ds.imu_accel), 1)), atol=1e-9)


def test_dead_reckoning_drifts_with_the_bias():
    ds = generate(cfg("straight", 60.0, camera_rate=1.0, noise_free=True,
                      biases={"lin_vel": BiasSchedule(value=(0, 0, 0.03))}))
    x0 = initial_state(ds)
    dr = dead_reckon(ds.twist_measurements(), x0)
    dz = dr.positions[-1, 2] - ds.gt.positions[-1, 2]
    assert dz == pytest.approx(1.8, abs=1e-9)


def test_noise_only_drift_grows_with_sqrt_time():
    quiet = TwistNoiseSpec(ang_sigma=1e-9, lin_sigma=0.05)
    err1, err4 = [], []
    for seed in range(40):
        ds = generate(cfg("straight", 4.0, camera_rate=1.0, twist_noise=quiet, seed=seed))
        d = ds.twist_lin - [1.0, 0, 0]
        drift = np.cumsum(d, axis=0) / ds.meta["twist_rate"]
        err1.append(drift[len(d) // 4 - 1])
        err4.append(drift[-1])
    ratio = np.std(err4) / np.std(err1)
    assert 1.6 < ratio < 2.5
    # per-sample sigma: std after T seconds is sigma sqrt(T / rate)
    assert np.std(err4) == pytest.approx(0.05 * np.sqrt(4.0 / 400.0), rel=0.3)


def test_observations_are_inside_the_image():
    ds = generate(cfg("figure_eight", 3.0, camera_rate=10.0))
    cam = ds.camera
    assert len(ds.stereo) > 0
    assert cam.in_image(ds.stereo[:, 2:5]).all()
    assert (ds.stereo[:, 2] > ds.stereo[:, 3]).all()
    per_frame = np.unique(ds.stereo[:, 0], return_counts=True)[1]
    assert per_frame.max() <= 60


def test_puddle_removes_observations():
    ds = generate(scenarios.puddle(duration=4.0, window=(1.0, 2.0)))
    t = ds.stereo[:, 0]
    assert not np.any((t >= 1.0) & (t <= 2.0))
    assert np.any(t < 1.0) and np.any(t > 2.0)


def test_discontinuous_velocity_is_rejected():
    wp = [[0, 0, 0, 0], [1, 1, 0, 0], [2, 1, 1, 0]]
    with pytest.raises(ValueError, match="discontinuous"):
        generate(cfg("waypoints", 2.0, spec={"waypoints": wp, "interpolation": "linear"}))
    ds = generate(cfg("waypoints", 2.0, noise_free=True, spec={"waypoints": wp}))
    np.testing.assert_allclose(ds.gt.positions[-1], [1, 1, 0], atol=1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(imu_rate=400.0, twist_rate=300.0)
    with pytest.raises(ValueError):
        generate(cfg("spiral"))


def test_bias_schedules():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 10, 11)
    np.testing.assert_allclose(BiasSchedule(value=(1, 2, 3)).sample(t, rng), np.tile([1, 2, 3], (11, 1)))
    ramp = BiasSchedule(kind="ramp", value=(0.01, 0, 0), rate=(0.001, 0, 0.002)).sample(t, rng)
    np.testing.assert_allclose(ramp[-1], [0.02, 0, 0.02])
    ou = BiasSchedule(kind="ou", value=(0.1, 0, 0), tau=1.0, sigma=(0.01, 0, 0))
    tl = np.linspace(0, 2000, 20001)
    s = ou.sample(tl, np.random.default_rng(1))
    assert s[:, 0].mean() == pytest.approx(0.1, abs=2e-3)
    assert s[:, 0].std() == pytest.approx(0.01, rel=0.1)
    with pytest.raises(ValueError):
        BiasSchedule(kind="sine").sample(t, rng)


def test_injected_biases_and_standing_spans():
    ds = generate(scenarios.standing(duration=6.0, span=(2.0, 4.0)))
    inside = (ds.gt.stamps > 2.2) & (ds.gt.stamps < 3.8)
    assert np.abs(ds.gt.velocities[inside]).max() == 0.0
    assert not ds.gt.biases[inside, 6:].any()
    moving = ds.gt.stamps > 4.5
    np.testing.assert_allclose(ds.gt.biases[moving, 11], 0.03)
    ramp = generate(scenarios.slippery(duration=5.0))
    np.testing.assert_allclose(ramp.gt.biases[-1, 9:12], [0.015, 0, 0.005], atol=1e-12)
