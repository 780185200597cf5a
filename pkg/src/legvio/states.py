"""Keyframe state, bias block and the manifold chart used by the solver.

Tangent ordering (21 dims), fixed throughout the package::

    [ dphi(0:3) | dp(3:6) | dv(6:9) | dbg(9:12) | dba(12:15) | dbw(15:18) | dbv(18:21) ]

Rotation is perturbed on the right, ``R <- R @ exp(dphi)``; every other block
is added in its own frame (position and velocity in world).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geom import exp_so3, log_so3, right_jacobian_inv_so3

STATE_DIM = 21
PHI = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
BW = slice(15, 18)
BV = slice(18, 21)
BIAS = slice(9, 21)
TWIST_BIAS = slice(15, 21)


def _vec3(v):
    out = np.zeros(3) if v is None else np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite vector {out}")
    return out


@dataclass(frozen=True)
class BiasBlock:
    """IMU biases (gyro, accel) and leg-odometry twist biases (angular, linear)."""

    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("gyro", "accel", "ang_vel", "lin_vel"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))

    @classmethod
    def from_vector(cls, b):
        b = np.asarray(b, dtype=float)
        return cls(b[0:3], b[3:6], b[6:9], b[9:12])

    def vector(self):
        return np.concatenate([self.gyro, self.accel, self.ang_vel, self.lin_vel])

    def twist_bias(self):
        return np.concatenate([self.ang_vel, self.lin_vel])


@dataclass(frozen=True)
class State:
    """Base orientation (world <- base), position, velocity, biases, stamp."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    biases: BiasBlock = field(default_factory=BiasBlock)
    stamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "velocity", _vec3(self.velocity))

    def with_biases(self, biases):
        return replace(self, biases=biases)


@dataclass(frozen=True)
class Landmark:
    id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))


def retract(x, delta):
    """Apply a 21-dim tangent update to ``x``."""
    delta = np.asarray(delta, dtype=float)
    b = x.biases.vector() + delta[BIAS]
    return State(
        rotation=x.rotation @ exp_so3(delta[PHI]),
        position=x.position + delta[POS],
        velocity=x.velocity + delta[VEL],
        biases=BiasBlock.from_vector(b),
        stamp=x.stamp,
    )


def local(x, y):
    """Tangent vector d with ``retract(x, d) == y``."""
    d = np.empty(STATE_DIM)
    d[PHI] = log_so3(x.rotation.T @ y.rotation)
    d[POS] = y.position - x.position
    d[VEL] = y.velocity - x.velocity
    d[BIAS] = y.biases.vector() - x.biases.vector()
    return d


def local_jacobian(x, y):
    """Derivative of ``local(x, retract(y, e))`` w.r.t. ``e`` at 0."""
    J = np.eye(STATE_DIM)
    J[PHI, PHI] = right_jacobian_inv_so3(log_so3(x.rotation.T @ y.rotation))
    return J
