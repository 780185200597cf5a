"""IMU preintegration between two keyframes.

One step with bias-corrected rates ``w = gyro - bg`` and ``a = accel - ba``,
all right-hand sides evaluated with the values from before the step::

    dp <- dp + dv dt + 1/2 dR a dt^2
    dv <- dv + dR a dt
    dR <- dR exp(w dt)

Gravity is not part of the delta; it enters only in the residual. Samples
carry the measurement for the interval that ends at their stamp, so a delta
built from samples stamped in (t_i, t_j] spans exactly [t_i, t_j].
The noise covariance is ordered (dphi, dv, dp).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import exp_so3, log_so3, right_jacobian_inv_so3, right_jacobian_so3, skew
from .states import BA, BG, PHI, POS, STATE_DIM, VEL, BiasBlock, State

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuSample:
    gyro: np.ndarray
    accel: np.ndarray
    stamp: float


@dataclass(frozen=True)
class ImuNoiseSpec:
    """White-noise densities (per sqrt(Hz)) and random-walk densities.

    Defaults match a tactical-grade MEMS unit (0.01 deg/s/sqrt(Hz), 60 ug/sqrt(Hz)).
    """

    gyro_sigma: float = 1.75e-4
    accel_sigma: float = 6e-4
    gyro_walk: float = 1e-5
    accel_walk: float = 1e-4
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        for name in ("gyro_sigma", "accel_sigma", "gyro_walk", "accel_walk"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))


@dataclass(frozen=True)
class PreintImuDelta:
    dR: np.ndarray = field(default_factory=lambda: np.eye(3))
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt: float = 0.0
    bias_ref: BiasBlock = field(default_factory=BiasBlock)
    dR_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dv_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dv_dba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dp_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dp_dba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    cov: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))
    start_stamp: float = 0.0
    last_stamp: float = 0.0
    count: int = 0


def new_imu_delta(bias_ref=None, start_stamp=0.0):
    return PreintImuDelta(
        bias_ref=BiasBlock() if bias_ref is None else bias_ref,
        start_stamp=start_stamp,
        last_stamp=start_stamp,
    )


def imu_integrate(delta, s, dt, noise=None):
    """Fold one sample into ``delta``; ``noise=None`` skips covariance growth."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if s.stamp <= delta.last_stamp:
        raise ValueError(
            f"non-monotone IMU stamp {s.stamp!r} after {delta.last_stamp!r}"
        )
    b = delta.bias_ref
    w = np.asarray(s.gyro, dtype=float) - b.gyro
    a = np.asarray(s.accel, dtype=float) - b.accel
    dR = delta.dR
    step = exp_so3(w * dt)
    Jr = right_jacobian_so3(w * dt)
    a_hat = skew(a)
    dR_a_hat = dR @ a_hat
    dt2 = 0.5 * dt * dt

    cov = delta.cov
    if noise is not None:
        A = np.eye(9)
        A[0:3, 0:3] = step.T
        A[3:6, 0:3] = -dR_a_hat * dt
        A[6:9, 0:3] = -dR_a_hat * dt2
        A[6:9, 3:6] = np.eye(3) * dt
        Bg = np.zeros((9, 3))
        Bg[0:3] = Jr * dt
        Ba = np.zeros((9, 3))
        Ba[3:6] = dR * dt
        Ba[6:9] = dR * dt2
        cov = (
            A @ cov @ A.T
            + (noise.gyro_sigma**2 / dt) * (Bg @ Bg.T)
            + (noise.accel_sigma**2 / dt) * (Ba @ Ba.T)
        )
        cov = 0.5 * (cov + cov.T)

    return PreintImuDelta(
        dR=dR @ step,
        dv=delta.dv + dR @ a * dt,
        dp=delta.dp + delta.dv * dt + dR @ a * dt2,
        dt=delta.dt + dt,
        bias_ref=b,
        dR_dbg=step.T @ delta.dR_dbg - Jr * dt,
        dv_dbg=delta.dv_dbg - dR_a_hat @ delta.dR_dbg * dt,
        dv_dba=delta.dv_dba - dR * dt,
        dp_dbg=delta.dp_dbg + delta.dv_dbg * dt - dR_a_hat @ delta.dR_dbg * dt2,
        dp_dba=delta.dp_dba + delta.dv_dba * dt - dR * dt2,
        cov=cov,
        start_stamp=delta.start_stamp,
        last_stamp=s.stamp,
        count=delta.count + 1,
    )


def integrate_samples(samples, start_stamp, bias_ref=None, noise=None):
    """Preintegrate a time-ordered iterable of samples starting at ``start_stamp``."""
    delta = new_imu_delta(bias_ref, start_stamp)
    for s in samples:
        delta = imu_integrate(delta, s, s.stamp - delta.last_stamp, noise)
    return delta


def imu_corrected(delta, biases):
    """First-order bias-corrected (dR, dv, dp) for new gyro/accel biases."""
    dbg = biases.gyro - delta.bias_ref.gyro
    dba = biases.accel - delta.bias_ref.accel
    dR = delta.dR @ exp_so3(delta.dR_dbg @ dbg)
    dv = delta.dv + delta.dv_dbg @ dbg + delta.dv_dba @ dba
    dp = delta.dp + delta.dp_dbg @ dbg + delta.dp_dba @ dba
    return dR, dv, dp


def imu_predict(x_i, delta, gravity=GRAVITY):
    """Forward-propagate state ``x_i`` through ``delta`` using x_i's biases."""
    dR, dv, dp = imu_corrected(delta, x_i.biases)
    T = delta.dt
    R = x_i.rotation
    return State(
        rotation=R @ dR,
        position=x_i.position + x_i.velocity * T + 0.5 * gravity * T * T + R @ dp,
        velocity=x_i.velocity + gravity * T + R @ dv,
        biases=x_i.biases,
        stamp=x_i.stamp + T,
    )


def imu_residual(x_i, x_j, delta, gravity=GRAVITY, jacobians=True):
    """9-vector residual ordered (rotation, velocity, position).

    Returns ``r`` or ``(r, J_i, J_j)`` with 9x21 Jacobians in the state
    tangent ordering.
    """
    dbg = x_i.biases.gyro - delta.bias_ref.gyro
    dR_c, dv_c, dp_c = imu_corrected(delta, x_i.biases)
    T = delta.dt
    Ri, Rj = x_i.rotation, x_j.rotation
    RiT = Ri.T
    E = dR_c.T @ RiT @ Rj
    r_R = log_so3(E)
    u_v = x_j.velocity - x_i.velocity - gravity * T
    u_p = x_j.position - x_i.position - x_i.velocity * T - 0.5 * gravity * T * T
    r = np.concatenate([r_R, RiT @ u_v - dv_c, RiT @ u_p - dp_c])
    if not jacobians:
        return r

    Jri = right_jacobian_inv_so3(r_R)
    J_i = np.zeros((9, STATE_DIM))
    J_j = np.zeros((9, STATE_DIM))
    J_i[0:3, PHI] = -Jri @ Rj.T @ Ri
    J_j[0:3, PHI] = Jri
    J_i[0:3, BG] = -Jri @ E.T @ right_jacobian_so3(delta.dR_dbg @ dbg) @ delta.dR_dbg

    J_i[3:6, PHI] = skew(RiT @ u_v)
    J_i[3:6, VEL] = -RiT
    J_j[3:6, VEL] = RiT
    J_i[3:6, BG] = -delta.dv_dbg
    J_i[3:6, BA] = -delta.dv_dba

    J_i[6:9, PHI] = skew(RiT @ u_p)
    J_i[6:9, POS] = -RiT
    J_j[6:9, POS] = RiT
    J_i[6:9, VEL] = -RiT * T
    J_i[6:9, BG] = -delta.dp_dbg
    J_i[6:9, BA] = -delta.dp_dba
    return r, J_i, J_j


def compose_imu(d1, d2):
    """Chain two noise-free deltas sharing the same bias reference."""
    T1 = d1.dt
    return (
        d1.dR @ d2.dR,
        d1.dv + d1.dR @ d2.dv,
        d1.dp + d1.dv * d2.dt + d1.dR @ d2.dp,
        T1 + d2.dt,
    )
