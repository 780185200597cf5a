"""Deterministic synthetic datasets: ground truth plus noisy IMU, twist and stereo.

Ground truth is sampled on the IMU tick grid ``t_k = k / imu_rate``. World
velocity and orientation come from a smooth trajectory description; position
is the trapezoidal integral of velocity, so the discrete kinematics used to
synthesise measurements are exactly those the preintegration assumes:

* gyro / twist angular rate over [t_k, t_k+1]: ``Log(R_k^T R_k+1) / dt``
* accelerometer: ``R_k^T ((v_k+1 - v_k) / dt - g)``
* twist linear velocity: ``R_k^T (p_k+1 - p_k) / dt``

Biases are added to every stream and white noise on top. With zero noise and
zero bias every factor evaluates to zero on the ground-truth states.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .factors import CameraModel
from .geom import exp_so3, log_so3, rot_z
from .preint_imu import ImuNoiseSpec, ImuSample
from .preint_velocity import TwistMeasurement, TwistNoiseSpec
from .states import BiasBlock, State
from .trajectory import Trajectory

log = logging.getLogger(__name__)

BIAS_NAMES = ("gyro", "accel", "ang_vel", "lin_vel")


@dataclass
class TrajectorySpec:
    """Path shape, speed profile and gait-induced body motion.

    ``kind`` is one of ``straight``, ``loop``, ``figure_eight`` or
    ``waypoints``. For waypoints, ``waypoints`` holds rows ``[t, x, y, z]``
    and ``interpolation`` selects a C2 cubic spline or (rejected) linear
    segments.
    """

    kind: str = "figure_eight"
    duration: float = 60.0
    speed: float = 1.0
    size: float = 6.0
    heading: float = 0.0
    start: tuple = (0.0, 0.0, 0.5)
    ramp_time: float = 0.0
    bounce_amplitude: float = 0.0
    sway_amplitude: float = 0.0
    gait_frequency: float = 2.0
    waypoints: list = field(default_factory=list)
    interpolation: str = "cubic"


@dataclass
class BiasSchedule:
    """``constant``: value; ``ramp``: value + rate t; ``ou``: Ornstein-Uhlenbeck around value."""

    kind: str = "constant"
    value: tuple = (0.0, 0.0, 0.0)
    rate: tuple = (0.0, 0.0, 0.0)
    tau: float = 10.0
    sigma: tuple = (0.0, 0.0, 0.0)

    def sample(self, t, rng):
        value = np.asarray(self.value, dtype=float)
        if self.kind == "constant":
            return np.tile(value, (len(t), 1))
        if self.kind == "ramp":
            return value + np.outer(t, np.asarray(self.rate, dtype=float))
        if self.kind == "ou":
            sigma = np.asarray(self.sigma, dtype=float)
            out = np.empty((len(t), 3))
            out[0] = value
            for k in range(1, len(t)):
                a = np.exp(-(t[k] - t[k - 1]) / self.tau)
                out[k] = value + (out[k - 1] - value) * a + sigma * np.sqrt(1 - a * a) * rng.normal(size=3)
            return out
        raise ValueError(f"unknown bias schedule kind {self.kind!r}")


@dataclass
class SimConfig:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    imu_rate: float = 400.0
    twist_rate: float = 400.0
    camera_rate: float = 30.0
    n_landmarks: int = 400
    landmark_ahead: tuple = (2.0, 10.0)
    landmark_lateral: tuple = (1.0, 5.0)
    landmark_height: tuple = (-0.4, 2.5)
    max_range: float = 15.0
    max_features: int = 60
    camera: CameraModel = field(default_factory=CameraModel.forward_looking)
    imu_noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)
    twist_noise: TwistNoiseSpec = field(default_factory=TwistNoiseSpec)
    pixel_sigma: float = 0.5
    noise_free: bool = False
    biases: dict = field(default_factory=dict)  # name in BIAS_NAMES -> BiasSchedule
    twist_bias_when_stationary: bool = False
    stationary: list = field(default_factory=list)  # [(start, end), ...]
    puddle: tuple | None = None  # (start, end): no landmark observations
    outlier_fraction: float = 0.0
    max_accel: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if min(self.imu_rate, self.twist_rate, self.camera_rate) <= 0:
            raise ValueError("rates must be positive")
        ratio = self.imu_rate / self.twist_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("twist_rate must divide imu_rate")


@dataclass
class SimDataset:
    """Ground truth and measurement streams as flat arrays."""

    gt: Trajectory  # dense, on the IMU tick grid, with injected biases
    imu_stamps: np.ndarray
    imu_gyro: np.ndarray
    imu_accel: np.ndarray
    twist_stamps: np.ndarray
    twist_ang: np.ndarray
    twist_lin: np.ndarray
    camera_stamps: np.ndarray
    stereo: np.ndarray  # rows: stamp, landmark_id, uL, uR, v
    landmark_ids: np.ndarray
    landmark_positions: np.ndarray
    camera: CameraModel
    imu_noise: ImuNoiseSpec
    twist_noise: TwistNoiseSpec
    pixel_sigma: float
    stationary: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def imu_samples(self):
        return [ImuSample(g, a, float(t)) for t, g, a in zip(self.imu_stamps, self.imu_gyro, self.imu_accel)]

    def twist_measurements(self):
        return [TwistMeasurement(w, v, float(t)) for t, w, v in zip(self.twist_stamps, self.twist_ang, self.twist_lin)]

    def observations_at(self, stamp, tol=1e-9):
        rows = self.stereo[np.abs(self.stereo[:, 0] - stamp) <= tol]
        return rows

    def landmark_map(self):
        return {int(i): p for i, p in zip(self.landmark_ids, self.landmark_positions)}

    def gt_state_at(self, stamp):
        return self.gt.state(int(self.gt.index_of(stamp)[0]))

    @property
    def gravity(self):
        return self.imu_noise.gravity


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10 - 15 * x + 6 * x * x)


def motion_mask(t, duration, ramp_time, stationary):
    """1 while moving, 0 while stationary, with C2 transitions of ``ramp_time``."""
    m = np.ones_like(t)
    if ramp_time > 0:
        m *= _smoothstep(t / ramp_time)
    for a, b in stationary:
        if ramp_time > 0:
            down = _smoothstep((a - t) / ramp_time)
            up = _smoothstep((t - b) / ramp_time)
            m *= np.where(t < a, down, np.where(t > b, up, 0.0))
        else:
            m *= ~((t >= a) & (t <= b))
    return m


def _figure_eight_table(size, n=200001):
    theta = np.linspace(0.0, 2 * np.pi, n)
    speed = size * np.sqrt(np.cos(theta) ** 2 + np.cos(2 * theta) ** 2)
    s = cumulative_trapezoid(speed, theta, initial=0.0)
    return theta, s


def _world_velocity_and_yaw(spec, t, mask):
    """World velocity (n, 3) and yaw (n,) on the sample grid ``t``."""
    kind = spec.kind
    if kind == "waypoints":
        wp = np.asarray(spec.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 4 or len(wp) < 2:
            raise ValueError("waypoints must be rows of [t, x, y, z]")
        if spec.interpolation == "cubic":
            cs = CubicSpline(wp[:, 0], wp[:, 1:], bc_type="clamped")
            vel = cs(t, 1)
        elif spec.interpolation == "linear":
            seg = np.clip(np.searchsorted(wp[:, 0], t, side="right") - 1, 0, len(wp) - 2)
            vel = (wp[seg + 1, 1:] - wp[seg, 1:]) / (wp[seg + 1, 0] - wp[seg, 0])[:, None]
        else:
            raise ValueError(f"unknown interpolation {spec.interpolation!r}")
        yaw = np.empty(len(t))
        last = spec.heading
        for k, v in enumerate(vel):
            if np.hypot(v[0], v[1]) > 1e-3:
                last = np.arctan2(v[1], v[0])
            yaw[k] = last
        return vel, np.unwrap(yaw)

    speed = spec.speed * mask
    s = cumulative_trapezoid(speed, t, initial=0.0)
    if kind == "straight":
        psi = np.full_like(t, spec.heading)
    elif kind == "loop":
        psi = spec.heading + s / spec.size
    elif kind == "figure_eight":
        theta_tab, s_tab = _figure_eight_table(spec.size)
        period = s_tab[-1]
        theta = np.interp(np.mod(s, period), s_tab, theta_tab)
        psi = spec.heading + np.unwrap(np.arctan2(np.cos(2 * theta), np.cos(theta)))
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    vel = np.zeros((len(t), 3))
    vel[:, 0] = speed * np.cos(psi)
    vel[:, 1] = speed * np.sin(psi)
    if spec.bounce_amplitude:
        w = 2 * np.pi * spec.gait_frequency
        vel[:, 2] = spec.bounce_amplitude * w * mask * np.cos(w * t)
    return vel, psi


def _orientations(spec, t, yaw, mask):
    R = np.empty((len(t), 3, 3))
    w = 2 * np.pi * spec.gait_frequency
    roll = spec.sway_amplitude * mask * np.sin(w * t)
    pitch = 0.5 * spec.sway_amplitude * mask * np.sin(w * t + 0.5 * np.pi)
    for k in range(len(t)):
        R[k] = rot_z(yaw[k]) @ exp_so3([0.0, pitch[k], 0.0]) @ exp_so3([roll[k], 0.0, 0.0])
    return R


def _landmarks(cfg, gt, rng):
    spec_ahead, spec_lat, spec_h = cfg.landmark_ahead, cfg.landmark_lateral, cfg.landmark_height
    n = cfg.n_landmarks
    k = rng.integers(0, len(gt), size=n)
    ahead = rng.uniform(*spec_ahead, size=n)
    side = rng.choice([-1.0, 1.0], size=n) * rng.uniform(*spec_lat, size=n)
    height = rng.uniform(*spec_h, size=n)
    pts = np.empty((n, 3))
    for a in range(n):
        R = gt.rotations[k[a]]
        fwd = R[:, 0].copy()
        fwd[2] = 0.0
        fwd /= max(np.linalg.norm(fwd), 1e-9)
        left = np.array([-fwd[1], fwd[0], 0.0])
        pts[a] = gt.positions[k[a]] + ahead[a] * fwd + side[a] * left
        pts[a, 2] = height[a]
    return np.arange(n), pts


def generate(config):
    """Build a :class:`SimDataset`; identical config and seed give identical arrays."""
    cfg = config
    spec = cfg.trajectory
    rng = np.random.default_rng(cfg.seed)
    noise_scale = 0.0 if cfg.noise_free else 1.0
    n_ticks = int(round(spec.duration * cfg.imu_rate))
    k_all = np.arange(n_ticks + 1)
    t = k_all / cfg.imu_rate
    dt = 1.0 / cfg.imu_rate

    mask = motion_mask(t, spec.duration, spec.ramp_time, cfg.stationary)
    vel, yaw = _world_velocity_and_yaw(spec, t, mask)
    jumps = np.linalg.norm(np.diff(vel, axis=0), axis=1) / dt
    if jumps.size and jumps.max() > cfg.max_accel:
        raise ValueError(
            f"trajectory velocity is discontinuous (|dv/dt| reaches {jumps.max():.3g} m/s^2)"
        )
    R = _orientations(spec, t, yaw, mask)
    pos = np.empty((len(t), 3))
    start = np.asarray(spec.waypoints, dtype=float)[0, 1:] if spec.kind == "waypoints" else spec.start
    pos[0] = start
    pos[1:] = start + np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt, axis=0)

    bias = np.zeros((len(t), 12))
    for i, name in enumerate(BIAS_NAMES):
        sched = cfg.biases.get(name)
        if sched is not None:
            bias[:, 3 * i:3 * i + 3] = sched.sample(t, rng)
    moving = mask > 0.0
    if not cfg.twist_bias_when_stationary:
        bias[~moving, 6:12] = 0.0
    gt = Trajectory(t, R, pos, vel, bias)

    g = cfg.imu_noise.gravity
    # IMU: sample stamped t_{k+1} measures [t_k, t_{k+1}]
    omega = np.array([log_so3(R[k].T @ R[k + 1]) for k in range(n_ticks)]) / dt
    acc_w = (vel[1:] - vel[:-1]) / dt - g
    accel = np.einsum("nji,nj->ni", R[:-1], acc_w)
    imu_n = cfg.imu_noise
    gyro_meas = omega + bias[:-1, 0:3] + noise_scale * rng.normal(
        scale=imu_n.gyro_sigma / np.sqrt(dt), size=(n_ticks, 3))
    accel_meas = accel + bias[:-1, 3:6] + noise_scale * rng.normal(
        scale=imu_n.accel_sigma / np.sqrt(dt), size=(n_ticks, 3))

    stride = int(round(cfg.imu_rate / cfg.twist_rate))
    tk = np.arange(0, n_ticks - stride + 1, stride)
    tdt = stride * dt
    tw_ang = np.array([log_so3(R[k].T @ R[k + stride]) for k in tk]) / tdt
    tw_lin = np.einsum("nji,nj->ni", R[tk], (pos[tk + stride] - pos[tk]) / tdt)
    tn = cfg.twist_noise
    tw_ang = tw_ang + bias[tk, 6:9] + noise_scale * rng.normal(scale=tn.ang_sigma, size=(len(tk), 3))
    tw_lin = tw_lin + bias[tk, 9:12] + noise_scale * rng.normal(scale=tn.lin_sigma, size=(len(tk), 3))

    lm_ids, lm_pos = _landmarks(cfg, gt, rng)

    # camera frames snapped to the twist grid
    n_frames = int(np.floor(spec.duration * cfg.camera_rate + 1e-9)) + 1
    cam_ticks = []
    for f in range(n_frames):
        tick = int(round(f * cfg.imu_rate / cfg.camera_rate / stride)) * stride
        if tick <= n_ticks and (not cam_ticks or tick > cam_ticks[-1]):
            cam_ticks.append(tick)
    cam_ticks = np.array(cam_ticks)
    cam_stamps = cam_ticks / cfg.imu_rate
    cam = cfg.camera
    rows = []
    for tick, stamp in zip(cam_ticks, cam_stamps):
        if cfg.puddle is not None and cfg.puddle[0] <= stamp <= cfg.puddle[1]:
            continue
        pc = cam.to_camera(R[tick], pos[tick], lm_pos)
        ok = (pc[:, 2] > 0.3) & (pc[:, 2] < cfg.max_range)
        uvv = np.full((len(pc), 3), -1.0)
        uvv[ok] = cam.project(pc[ok])
        # keep a margin so noisy pixels stay inside the image
        margin = 3.0 * cfg.pixel_sigma * noise_scale
        inside = ok & cam.in_image(uvv - margin) & cam.in_image(uvv + margin)
        idx = np.flatnonzero(inside)
        idx = idx[np.argsort(pc[idx, 2], kind="stable")][: cfg.max_features]
        idx.sort()
        meas = uvv[idx] + noise_scale * rng.normal(scale=cfg.pixel_sigma, size=(len(idx), 3))
        if cfg.outlier_fraction > 0:
            bad = rng.random(len(idx)) < cfg.outlier_fraction
            nb = int(bad.sum())
            uL = rng.uniform(0, cam.width, nb)
            meas[bad, 0] = uL
            meas[bad, 1] = uL - rng.uniform(0.5, 20.0, nb)
            meas[bad, 2] = rng.uniform(0, cam.height, nb)
        for a, m in zip(idx, meas):
            rows.append((stamp, lm_ids[a], m[0], m[1], m[2]))
    stereo = np.array(rows, dtype=float).reshape(-1, 5)

    return SimDataset(
        gt=gt,
        imu_stamps=t[1:],
        imu_gyro=gyro_meas,
        imu_accel=accel_meas,
        twist_stamps=t[tk + stride],
        twist_ang=tw_ang,
        twist_lin=tw_lin,
        camera_stamps=cam_stamps,
        stereo=stereo,
        landmark_ids=lm_ids,
        landmark_positions=lm_pos,
        camera=cam,
        imu_noise=cfg.imu_noise,
        twist_noise=cfg.twist_noise,
        pixel_sigma=cfg.pixel_sigma,
        stationary=[tuple(s) for s in cfg.stationary],
        meta={"seed": cfg.seed, "imu_rate": cfg.imu_rate, "twist_rate": cfg.twist_rate,
              "camera_rate": cfg.camera_rate, "noise_free": cfg.noise_free},
    )


def dead_reckon(twists, initial):
    """Integrate twist measurements directly, ignoring any bias.

    ``twists`` are :class:`TwistMeasurement` objects (each covering the
    interval ending at its stamp); returns a :class:`Trajectory` starting at
    ``initial`` with one sample per measurement plus the initial one.
    """
    R = initial.rotation.copy()
    p = initial.position.copy()
    t_prev = initial.stamp
    stamps, Rs, ps, vs = [t_prev], [R], [p], [initial.velocity.copy()]
    for m in twists:
        dt = m.stamp - t_prev
        if dt <= 0:
            raise ValueError("twist stream must be time-ordered after the initial state")
        v_world = R @ np.asarray(m.lin_vel, dtype=float)
        p = p + v_world * dt
        R = R @ exp_so3(np.asarray(m.ang_vel, dtype=float) * dt)
        t_prev = m.stamp
        stamps.append(t_prev)
        Rs.append(R)
        ps.append(p)
        vs.append(v_world)
    return Trajectory(np.array(stamps), np.array(Rs), np.array(ps), np.array(vs))


def initial_state(dataset, biases=None):
    """Ground-truth state at the first camera frame (biases zero unless given)."""
    x = dataset.gt_state_at(dataset.camera_stamps[0])
    return State(x.rotation, x.position, x.velocity, biases or BiasBlock(), x.stamp)
