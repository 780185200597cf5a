"""Keyframe assembly, zero-velocity voting and the sliding-window estimator loop.

Every camera frame is a keyframe. Three producer lanes (IMU preintegration,
twist preintegration, stereo packet assembly) split their streams at the
camera stamps and hand finished pieces to the optimizer lane, which adds the
new state and its factors, optimizes the window and marginalizes the oldest
state once the window is full. A propagation lane forward-integrates the
latest optimized state with IMU samples to give a full-rate output.

``run(..., threaded=True)`` runs the lanes as threads connected by bounded
FIFO queues; ``threaded=False`` runs them in one loop. Producers preintegrate
against a fixed bias reference and the optimizer re-preintegrates a packet
only when its current bias estimate has moved too far from that reference,
so both modes perform the same arithmetic in the same order and give
bit-identical results.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .factors import (
    BiasRandomWalkFactor,
    ImuFactor,
    L,
    NoiseModel,
    PoseHoldFactor,
    PriorFactor,
    StereoFactor,
    StereoObservation,
    VelocityFactor,
    X,
    ZeroVelocityFactor,
    bias_rw_sigmas,
)
from .geom import log_so3
from .preint_imu import imu_corrected, imu_integrate, imu_predict, integrate_samples, new_imu_delta
from .preint_velocity import integrate_twists, vel_apply_bias_update
from .simulator import dead_reckon
from .solver import FactorGraph, SolverConfig, marginalize_oldest, optimize
from .states import TWIST_BIAS, BiasBlock, State
from .trajectory import Trajectory

log = logging.getLogger(__name__)

MODES = ("vvb", "vvi", "vrp", "deadreckon")


@dataclass
class ZeroVelocityThresholds:
    translation: float = 1e-4  # m
    rotation_deg: float = 0.5
    pixels: float = 0.5


@dataclass
class PipelineConfig:
    mode: str = "vvb"
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_states=10, max_iterations=3, rel_cost_tol=1e-6))
    use_stereo: bool = True
    velocity_rotation: bool = True
    dcs_phi: float | None = 1.0
    pixel_sigma: float | None = None  # defaults to the dataset's value
    min_disparity: float = 1.0
    prior_sigmas: tuple = (1e-3, 1e-3, 1e-2, 1e-2, 1e-1, 1e-2, 1e-1)  # rot, pos, vel, bg, ba, bw, bv
    initial_biases: tuple = (0.0,) * 12
    zero_velocity: bool = True
    zv_thresholds: ZeroVelocityThresholds = field(default_factory=ZeroVelocityThresholds)
    zv_sigma: float = 1e-3
    repreintegrate_threshold: float = 0.01
    gap_factor: float = 2.0
    final_iterations: int = 0  # extra solver iterations on the last window

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")


@dataclass
class KeyframePacket:
    index: int
    stamp: float
    prev_stamp: float
    imu_delta: object
    vel_delta: object
    imu_samples: list
    twists: list
    observations: list  # StereoObservation


@dataclass
class RunResult:
    optimized: Trajectory  # per keyframe, last estimate before leaving the window
    filtered: Trajectory  # per keyframe, estimate right after its own optimization
    propagated: Trajectory  # IMU rate
    zero_velocity: np.ndarray  # per keyframe vote (interval ending at the keyframe)
    solve_times: np.ndarray
    iterations: np.ndarray
    mode: str = "vvb"

    @property
    def bias_stamps(self):
        return self.filtered.stamps

    @property
    def bias_trace(self):
        return self.filtered.biases


# --------------------------------------------------------------------------
# zero-velocity detection


def zero_velocity_vote(imu_motion, leg_motion, pixel_displacement, thresholds=None):
    """Two-of-three vote that the robot did not move over one keyframe interval.

    ``imu_motion`` and ``leg_motion`` are (translation m, rotation rad);
    ``pixel_displacement`` is the largest feature displacement in pixels or
    None when no feature was tracked across the interval, in which case
    vision abstains and both remaining modalities must agree.
    """
    th = thresholds or ZeroVelocityThresholds()
    rot = np.deg2rad(th.rotation_deg)

    def still(m):
        return m[0] < th.translation and m[1] < rot

    votes = [still(imu_motion), still(leg_motion)]
    if pixel_displacement is None:
        return all(votes)
    votes.append(pixel_displacement < th.pixels)
    return sum(votes) >= 2


def imu_motion(x_i, delta, gravity):
    """Translation and rotation over ``delta`` assuming the robot starts at rest."""
    dR, _, dp = imu_corrected(delta, x_i.biases)
    T = delta.dt
    trans = x_i.rotation @ dp + 0.5 * gravity * T * T
    return float(np.linalg.norm(trans)), float(np.linalg.norm(log_so3(dR)))


def leg_motion(delta):
    """Translation and rotation reported by the raw (not bias-corrected) twists.

    The twist bias models slip and terrain deformation during stepping, so a
    standing robot's leg odometry reads zero without correction.
    """
    dR, dp = vel_apply_bias_update(delta, np.zeros(6))
    return float(np.linalg.norm(dp)), float(np.linalg.norm(log_so3(dR)))


def pixel_displacement(obs_i, obs_j):
    """Largest (uL, v) displacement of landmarks seen in both frames, or None."""
    a = {o.landmark_id: o for o in obs_i}
    d = [np.hypot(o.uL - a[o.landmark_id].uL, o.v - a[o.landmark_id].v)
         for o in obs_j if o.landmark_id in a]
    return max(d) if d else None


# --------------------------------------------------------------------------
# producer lanes


def _split(stamps, bounds):
    """Index ranges of ``stamps`` in (bounds[k-1], bounds[k]] for k >= 1."""
    edges = np.searchsorted(stamps, bounds, side="right")
    return [(edges[k - 1], edges[k]) for k in range(1, len(bounds))]


def _warn_gaps(name, stamps, factor):
    if len(stamps) < 3:
        return
    d = np.diff(stamps)
    nominal = np.median(d)
    for k in np.flatnonzero(d > factor * nominal):
        log.warning("%s stream gap of %.4f s at t=%.4f (nominal %.4f s)", name, d[k], stamps[k], nominal)


def imu_lane(dataset, bounds, bias_ref, emit):
    samples = dataset.imu_samples()
    stamps = dataset.imu_stamps
    _warn_gaps("imu", stamps, 2.0)
    for k, (a, b) in enumerate(_split(stamps, bounds), start=1):
        chunk = samples[a:b]
        emit(k, (integrate_samples(chunk, bounds[k - 1], bias_ref, dataset.imu_noise), chunk))


def velocity_lane(dataset, bounds, bias_ref, emit):
    twists = dataset.twist_measurements()
    stamps = dataset.twist_stamps
    _warn_gaps("twist", stamps, 2.0)
    for k, (a, b) in enumerate(_split(stamps, bounds), start=1):
        chunk = twists[a:b]
        emit(k, (integrate_twists(chunk, bounds[k - 1], bias_ref.twist_bias(), dataset.twist_noise), chunk))


def vision_lane(dataset, bounds, emit):
    rows = dataset.stereo
    starts = np.searchsorted(rows[:, 0], np.asarray(bounds) - 1e-9, side="left")
    ends = np.searchsorted(rows[:, 0], np.asarray(bounds) + 1e-9, side="right")
    for k in range(len(bounds)):
        obs = [StereoObservation(int(r[1]), r[2], r[3], r[4], r[0]) for r in rows[starts[k]:ends[k]]]
        emit(k, obs)


# --------------------------------------------------------------------------
# optimizer lane


class WindowEstimator:
    """Owns the factor graph and values of the sliding window."""

    def __init__(self, dataset, config, initial):
        self.ds = dataset
        self.cfg = config
        self.gravity = dataset.gravity
        self.graph = FactorGraph()
        self.values = {}
        self.landmark_refs = {}
        px = config.pixel_sigma if config.pixel_sigma is not None else dataset.pixel_sigma
        self.stereo_noise = NoiseModel.from_sigmas([px] * 3, dcs_phi=config.dcs_phi)
        self.estimate_twist_bias = config.mode == "vvb"
        self.use_velocity = config.mode in ("vvb", "vrp")
        self.prev_obs = []
        self.optimized = {}
        self.filtered = []
        self.zv = [False]
        self.solve_times = []
        self.iterations = []

        x0 = State(initial.rotation, initial.position, initial.velocity,
                   BiasBlock.from_vector(config.initial_biases), initial.stamp)
        s = config.prior_sigmas
        sig = np.concatenate([np.full(3, v) for v in s])
        self.values[X(0)] = x0
        self.graph.add(PriorFactor(X(0), x0, NoiseModel.from_sigmas(sig)))
        self._freeze(X(0))

    def _freeze(self, key):
        if not self.estimate_twist_bias:
            self.graph.freeze(key, range(TWIST_BIAS.start, TWIST_BIAS.stop))

    def start(self, observations, stamp):
        self._add_observations(0, observations)
        self._solve(0)

    def _add_observations(self, j, observations):
        if not self.cfg.use_stereo:
            return
        cam = self.ds.camera
        xj = self.values[X(j)]
        for o in observations:
            key = L(o.landmark_id)
            if key not in self.values:
                pc = cam.back_project(o.uL, o.uR, o.v)
                if pc is None or o.uL - o.uR < self.cfg.min_disparity:
                    continue
                self.values[key] = xj.rotation @ (cam.R_BC @ pc + cam.t_BC) + xj.position
            self.graph.add(StereoFactor(X(j), key, o, cam, self.stereo_noise))

    def _repreintegrate(self, packet, xi):
        # deltas are affine in the accelerometer and linear-velocity biases, so
        # only a drift of the rotation-rate biases warrants re-summing
        imu_d, vel_d = packet.imu_delta, packet.vel_delta
        thr = self.cfg.repreintegrate_threshold
        b = xi.biases
        if np.abs(b.gyro - imu_d.bias_ref.gyro).max() > thr:
            imu_d = integrate_samples(packet.imu_samples, packet.prev_stamp, b, self.ds.imu_noise)
        if np.abs(b.ang_vel - vel_d.bias_ref[:3]).max() > thr:
            vel_d = integrate_twists(packet.twists, packet.prev_stamp, b.twist_bias(), self.ds.twist_noise)
        return imu_d, vel_d

    def add_keyframe(self, packet):
        j = packet.index
        i = j - 1
        xi = self.values[X(i)]
        imu_d, vel_d = self._repreintegrate(packet, xi)
        xj = imu_predict(xi, imu_d, self.gravity)
        xj = State(xj.rotation, xj.position, xj.velocity, xi.biases, packet.stamp)
        self.values[X(j)] = xj
        self._freeze(X(j))

        still = False
        if self.cfg.zero_velocity:
            still = zero_velocity_vote(
                imu_motion(xi, imu_d, self.gravity),
                leg_motion(vel_d),
                pixel_displacement(self.prev_obs, packet.observations),
                self.cfg.zv_thresholds,
            )
        self.zv.append(still)

        g = self.graph
        g.add(ImuFactor(X(i), X(j), imu_d, self.gravity))
        dt = packet.stamp - packet.prev_stamp
        if still:
            if not self.zv[i]:
                g.add(ZeroVelocityFactor(X(i), self.cfg.zv_sigma))
            g.add(ZeroVelocityFactor(X(j), self.cfg.zv_sigma))
            g.add(PoseHoldFactor(X(i), X(j)))
            # twist bias held at its value from the start of the span
            g.freeze(X(j), range(TWIST_BIAS.start, TWIST_BIAS.stop))
        elif self.use_velocity:
            g.add(VelocityFactor(X(i), X(j), vel_d, self.cfg.velocity_rotation))
        g.add(BiasRandomWalkFactor(X(i), X(j), bias_rw_sigmas(self.ds.imu_noise, self.ds.twist_noise, dt)))
        self._add_observations(j, packet.observations)
        self.prev_obs = packet.observations
        self._solve(j)

    def _solve(self, j):
        res = optimize(self.graph, self.values, self.cfg.solver)
        self.values = res.values
        self.solve_times.append(res.wall_time)
        self.iterations.append(res.iterations)
        self.filtered.append(self.values[X(j)])
        while len(self.graph.state_keys()) > self.cfg.solver.max_states:
            oldest = self.graph.state_keys()[0]
            self.optimized[oldest[1]] = self.values[oldest]
            self.graph = marginalize_oldest(self.graph, self.values)
            live = self.graph.keys()
            self.values = {k: v for k, v in self.values.items() if k in live}

    def finish(self):
        if self.cfg.final_iterations > 0:
            cfg = replace(self.cfg.solver, max_iterations=self.cfg.final_iterations)
            self.values = optimize(self.graph, self.values, cfg).values
        for k in self.graph.state_keys():
            self.optimized[k[1]] = self.values[k]
        return [self.optimized[k] for k in sorted(self.optimized)]

    def latest(self):
        return self.filtered[-1]


def _propagate(x, samples, gravity, out):
    """Append IMU-rate predictions from ``x`` over ``samples`` to ``out``."""
    delta = new_imu_delta(x.biases, x.stamp)
    for s in samples:
        delta = imu_integrate(delta, s, s.stamp - delta.last_stamp)
        out.append(imu_predict(x, delta, gravity))


# --------------------------------------------------------------------------
# driver


def _assemble(k, bounds, imu_item, vel_item, obs):
    (imu_d, imu_chunk), (vel_d, tw_chunk) = imu_item, vel_item
    return KeyframePacket(k, float(bounds[k]), float(bounds[k - 1]), imu_d, vel_d, imu_chunk, tw_chunk, obs)


def run(dataset, config=None, initial=None, threaded=False, queue_size=2):
    """Estimate the trajectory of ``dataset``.

    ``initial`` is the pose/velocity at the first camera frame (default: the
    ground truth there). Returns a :class:`RunResult`.
    """
    cfg = config or PipelineConfig()
    bounds = np.asarray(dataset.camera_stamps, dtype=float)
    if initial is None:
        initial = dataset.gt_state_at(bounds[0])
    if cfg.mode == "deadreckon":
        return _run_deadreckon(dataset, initial, bounds)
    bias_ref = BiasBlock.from_vector(cfg.initial_biases)
    est = WindowEstimator(dataset, cfg, initial)
    propagated = [est.values[X(0)]]
    prop_samples = _imu_chunks(dataset, bounds)

    if threaded:
        _run_threaded(dataset, bounds, bias_ref, est, propagated, prop_samples, queue_size)
    else:
        vis = []
        vision_lane(dataset, bounds, lambda k, o: vis.append(o))
        imu_items, vel_items = [], []
        imu_lane(dataset, bounds, bias_ref, lambda k, it: imu_items.append(it))
        velocity_lane(dataset, bounds, bias_ref, lambda k, it: vel_items.append(it))
        est.start(vis[0], bounds[0])
        _propagate(est.latest(), prop_samples[0], est.gravity, propagated)
        for k in range(1, len(bounds)):
            est.add_keyframe(_assemble(k, bounds, imu_items[k - 1], vel_items[k - 1], vis[k]))
            _propagate(est.latest(), prop_samples[k], est.gravity, propagated)

    return RunResult(
        optimized=Trajectory.from_states(est.finish()),
        filtered=Trajectory.from_states(est.filtered),
        propagated=Trajectory.from_states(propagated),
        zero_velocity=np.array(est.zv, dtype=bool),
        solve_times=np.array(est.solve_times),
        iterations=np.array(est.iterations),
        mode=cfg.mode,
    )


def _imu_chunks(dataset, bounds):
    """IMU samples after each keyframe up to the next one (or the stream end)."""
    samples = dataset.imu_samples()
    ext = np.append(bounds, np.inf)
    edges = np.searchsorted(dataset.imu_stamps, ext, side="right")
    return [samples[edges[k]:edges[k + 1]] for k in range(len(bounds))]


_DONE = object()


def _run_threaded(dataset, bounds, bias_ref, est, propagated, prop_samples, queue_size):
    q_imu = queue.Queue(queue_size)
    q_vel = queue.Queue(queue_size)
    q_vis = queue.Queue(queue_size)
    q_prop = queue.Queue(queue_size)
    errors = []

    def guard(fn, *args):
        def body():
            try:
                fn(*args)
            except BaseException as exc:  # surfaced in the caller
                errors.append(exc)
        return body

    def put(q):
        return lambda k, item: q.put((k, item))

    def prop_lane():
        while True:
            item = q_prop.get()
            if item is _DONE:
                return
            k, x = item
            _propagate(x, prop_samples[k], est.gravity, propagated)

    threads = [
        threading.Thread(target=guard(imu_lane, dataset, bounds, bias_ref, put(q_imu)), name="imu-lane"),
        threading.Thread(target=guard(velocity_lane, dataset, bounds, bias_ref, put(q_vel)), name="vel-lane"),
        threading.Thread(target=guard(vision_lane, dataset, bounds, put(q_vis)), name="vision-lane"),
        threading.Thread(target=guard(prop_lane), name="propagation-lane"),
    ]
    for t in threads:
        t.start()

    def take(q):
        while True:
            if errors:
                raise errors[0]
            try:
                return q.get(timeout=0.5)[1]
            except queue.Empty:
                continue

    try:
        est.start(take(q_vis), bounds[0])
        q_prop.put((0, est.latest()))
        for k in range(1, len(bounds)):
            packet = _assemble(k, bounds, take(q_imu), take(q_vel), take(q_vis))
            est.add_keyframe(packet)
            q_prop.put((k, est.latest()))
    finally:
        q_prop.put(_DONE)
        for t in threads:
            t.join(timeout=60.0)
    if errors:
        raise errors[0]


def _run_deadreckon(dataset, initial, bounds):
    t0 = time.perf_counter()
    twists = [m for m in dataset.twist_measurements() if m.stamp > bounds[0]]
    traj = dead_reckon(twists, initial)
    keep = np.searchsorted(traj.stamps, bounds - 1e-9)
    keep = keep[keep < len(traj)]
    kf = traj.subset(keep)
    kf.biases = np.zeros((len(kf), 12))
    n = len(kf)
    return RunResult(
        optimized=kf,
        filtered=kf,
        propagated=traj,
        zero_velocity=np.zeros(n, dtype=bool),
        solve_times=np.full(n, (time.perf_counter() - t0) / max(n, 1)),
        iterations=np.zeros(n, dtype=int),
        mode="deadreckon",
    )
