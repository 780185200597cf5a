"""Finite-difference verification of every analytic factor Jacobian.

Each suite draws random linearization points, perturbs each variable through
its retraction with central differences and reports the worst relative
error ``max|J_analytic - J_fd| / max(1, max|J_fd|)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors import (
    BiasRandomWalkFactor,
    CameraModel,
    ImuFactor,
    L,
    NoiseModel,
    PoseHoldFactor,
    PriorFactor,
    StereoObservation,
    StereoFactor,
    VelocityFactor,
    X,
    ZeroVelocityFactor,
    key_dim,
    retract_value,
)
from .geom import exp_so3
from .preint_imu import ImuNoiseSpec, ImuSample, integrate_samples
from .preint_velocity import TwistMeasurement, TwistNoiseSpec, integrate_twists
from .states import BiasBlock, State, retract

FD_STEP = 1e-6


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0, max_angle))


def random_state(rng, bias_scale=0.05, stamp=0.0):
    return State(
        rotation=random_rotation(rng),
        position=rng.normal(size=3),
        velocity=rng.normal(size=3),
        biases=BiasBlock.from_vector(rng.normal(scale=bias_scale, size=12)),
        stamp=stamp,
    )


def numerical_jacobian(factor, values, key, step=FD_STEP):
    r0 = factor.evaluate(values, jacobians=False)
    n = key_dim(key)
    J = np.zeros((r0.size, n))
    for c in range(n):
        d = np.zeros(n)
        d[c] = step
        vp = dict(values)
        vm = dict(values)
        vp[key] = retract_value(key, values[key], d)
        vm[key] = retract_value(key, values[key], -d)
        J[:, c] = (factor.evaluate(vp, jacobians=False) - factor.evaluate(vm, jacobians=False)) / (2 * step)
    return J


def jacobian_error(factor, values, step=FD_STEP):
    _, Js = factor.evaluate(values, jacobians=True)
    worst = 0.0
    for key, Ja in zip(factor.keys, Js):
        Jn = numerical_jacobian(factor, values, key, step)
        err = np.abs(Ja - Jn).max() / max(1.0, np.abs(Jn).max())
        worst = max(worst, float(err))
    return worst


def random_imu_delta(rng, n=20, dt=0.0025, bias_ref=None):
    samples = [
        ImuSample(rng.normal(scale=0.5, size=3), rng.normal(scale=2.0, size=3) + [0, 0, 9.81], (k + 1) * dt)
        for k in range(n)
    ]
    return integrate_samples(samples, 0.0, bias_ref, ImuNoiseSpec())


def random_vel_delta(rng, n=20, dt=0.0025, bias_ref=None):
    twists = [
        TwistMeasurement(rng.normal(scale=0.5, size=3), rng.normal(scale=1.0, size=3), (k + 1) * dt)
        for k in range(n)
    ]
    return integrate_twists(twists, 0.0, bias_ref, TwistNoiseSpec())


def _imu_case(rng):
    xi, xj = random_state(rng), random_state(rng)
    ref = BiasBlock.from_vector(xi.biases.vector() + rng.normal(scale=0.01, size=12))
    return ImuFactor(X(0), X(1), random_imu_delta(rng, bias_ref=ref)), {X(0): xi, X(1): xj}


def _vel_case(rng):
    xi, xj = random_state(rng), random_state(rng)
    ref = xi.biases.twist_bias() + rng.normal(scale=0.01, size=6)
    return VelocityFactor(X(0), X(1), random_vel_delta(rng, bias_ref=ref)), {X(0): xi, X(1): xj}


def _stereo_case(rng):
    cam = CameraModel.forward_looking(fx=400.0, fy=380.0, cx=424.0, cy=240.0, baseline=0.05)
    x = random_state(rng)
    pc = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2.0, 8.0)])
    m = x.rotation @ (cam.R_BC @ pc + cam.t_BC) + x.position
    uvv = cam.project(pc) + rng.normal(scale=0.5, size=3)
    obs = StereoObservation(7, *uvv)
    f = StereoFactor(X(0), L(7), obs, cam, NoiseModel.from_sigmas([0.5] * 3))
    return f, {X(0): x, L(7): m + rng.normal(scale=0.05, size=3)}


def _prior_case(rng):
    prior = random_state(rng)
    x = retract(prior, rng.normal(scale=0.3, size=21))
    return PriorFactor(X(0), prior, NoiseModel.from_sigmas(np.full(21, 0.1))), {X(0): x}


def _bias_case(rng):
    xi, xj = random_state(rng), random_state(rng)
    return BiasRandomWalkFactor(X(0), X(1), np.full(12, 1e-2)), {X(0): xi, X(1): xj}


def _zero_vel_case(rng):
    return ZeroVelocityFactor(X(0)), {X(0): random_state(rng)}


def _pose_hold_case(rng):
    xi = random_state(rng)
    xj = State(xi.rotation @ exp_so3(rng.normal(scale=0.2, size=3)), xi.position + rng.normal(size=3))
    return PoseHoldFactor(X(0), X(1)), {X(0): xi, X(1): xj}


SUITES = {
    "imu": _imu_case,
    "velocity": _vel_case,
    "stereo": _stereo_case,
    "prior": _prior_case,
    "bias_rw": _bias_case,
    "zero_velocity": _zero_vel_case,
    "pose_hold": _pose_hold_case,
}


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def run_suite(name, trials=100, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        factor, values = SUITES[name](rng)
        worst = max(worst, jacobian_error(factor, values))
    return SuiteResult(name, trials, worst, tol)


def run_all(trials=100, seed=0, tol=1e-4):
    return [run_suite(n, trials, seed + i, tol) for i, n in enumerate(SUITES)]
