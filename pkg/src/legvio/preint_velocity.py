"""Preintegration of fused leg-odometry twist measurements.

A twist measurement gives body-frame angular and linear velocity, each
corrupted by a slowly varying bias (b_w, b_v) and white noise. Holding the
twist constant over each sample interval, with ``w = ang_vel - b_w`` and
``u = lin_vel - b_v``::

    dp <- dp + dR u dt
    dR <- dR exp(w dt)

so that ``dp_ij = R_i^T (p_j - p_i)`` and ``dR_ij = R_i^T R_j`` for exact data.

Bias Jacobians follow by differentiating the two sums (dR_k stands for the
rotation *before* step k)::

    d(dR)/d(b_w) <- exp(w dt)^T d(dR)/d(b_w) - J_r(w dt) dt
    d(dp)/d(b_v) <- d(dp)/d(b_v) - dR_k dt
    d(dp)/d(b_w) <- d(dp)/d(b_w) - dR_k u^ d(dR)/d(b_w) dt

Covariance of (dphi, dp) is propagated as ``A S A^T + B S_eta B^T`` with::

    A = [[exp(w dt)^T,        0],     B = [[J_r(w dt) dt,       0],
         [-dR_k u^ dt,        I]]          [0,          dR_k dt]]

and ``S_eta = diag(sigma_w^2 I, sigma_v^2 I)`` per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import exp_so3, log_so3, right_jacobian_inv_so3, right_jacobian_so3, skew
from .states import BV, BW, PHI, POS, STATE_DIM


@dataclass(frozen=True)
class TwistMeasurement:
    ang_vel: np.ndarray
    lin_vel: np.ndarray
    stamp: float


@dataclass(frozen=True)
class TwistNoiseSpec:
    """Per-sample white noise (rad/s, m/s) and bias random-walk densities."""

    ang_sigma: float = 5e-3
    lin_sigma: float = 1e-2
    ang_walk: float = 1e-4
    lin_walk: float = 1e-3

    def __post_init__(self):
        for name in ("ang_sigma", "lin_sigma", "ang_walk", "lin_walk"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def eta_cov(self):
        return np.diag([self.ang_sigma**2] * 3 + [self.lin_sigma**2] * 3)


@dataclass(frozen=True)
class PreintVelDelta:
    dR: np.ndarray = field(default_factory=lambda: np.eye(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt: float = 0.0
    bias_ref: np.ndarray = field(default_factory=lambda: np.zeros(6))  # (b_w, b_v)
    dR_dbw: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dp_dbw: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dp_dbv: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    cov: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))
    start_stamp: float = 0.0
    last_stamp: float = 0.0
    count: int = 0


def new_vel_delta(bias_ref=None, start_stamp=0.0):
    b = np.zeros(6) if bias_ref is None else np.asarray(bias_ref, dtype=float).reshape(6)
    return PreintVelDelta(bias_ref=b, start_stamp=start_stamp, last_stamp=start_stamp)


def vel_propagate_cov(cov, ang_vel, lin_vel, bias, dR_ik, dt, noise):
    """One covariance step for the (dphi, dp) noise of the velocity delta.

    ``bias`` is the (b_w, b_v) reference and ``dR_ik`` the preintegrated
    rotation before this step.
    """
    bias = np.asarray(bias, dtype=float)
    w = np.asarray(ang_vel, dtype=float) - bias[:3]
    u = np.asarray(lin_vel, dtype=float) - bias[3:]
    A = np.eye(6)
    A[0:3, 0:3] = exp_so3(w * dt).T
    A[3:6, 0:3] = -dR_ik @ skew(u) * dt
    B = np.zeros((6, 6))
    B[0:3, 0:3] = right_jacobian_so3(w * dt) * dt
    B[3:6, 3:6] = dR_ik * dt
    out = A @ cov @ A.T + B @ noise.eta_cov() @ B.T
    return 0.5 * (out + out.T)


def vel_integrate(delta, m, dt, noise=None):
    """Fold one twist measurement into ``delta``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if m.stamp <= delta.last_stamp:
        raise ValueError(
            f"non-monotone twist stamp {m.stamp!r} after {delta.last_stamp!r}"
        )
    b = delta.bias_ref
    w = np.asarray(m.ang_vel, dtype=float) - b[:3]
    u = np.asarray(m.lin_vel, dtype=float) - b[3:]
    dR = delta.dR
    step = exp_so3(w * dt)
    cov = delta.cov
    if noise is not None:
        cov = vel_propagate_cov(cov, m.ang_vel, m.lin_vel, b, dR, dt, noise)
    return PreintVelDelta(
        dR=dR @ step,
        dp=delta.dp + dR @ u * dt,
        dt=delta.dt + dt,
        bias_ref=b,
        dR_dbw=step.T @ delta.dR_dbw - right_jacobian_so3(w * dt) * dt,
        dp_dbw=delta.dp_dbw - dR @ skew(u) @ delta.dR_dbw * dt,
        dp_dbv=delta.dp_dbv - dR * dt,
        cov=cov,
        start_stamp=delta.start_stamp,
        last_stamp=m.stamp,
        count=delta.count + 1,
    )


def integrate_twists(twists, start_stamp, bias_ref=None, noise=None):
    delta = new_vel_delta(bias_ref, start_stamp)
    for m in twists:
        delta = vel_integrate(delta, m, m.stamp - delta.last_stamp, noise)
    return delta


def vel_apply_bias_update(delta, new_bias):
    """First-order corrected (dR, dp) for twist biases ``new_bias = (b_w, b_v)``."""
    db = np.asarray(new_bias, dtype=float).reshape(6) - delta.bias_ref
    dR = delta.dR @ exp_so3(delta.dR_dbw @ db[:3])
    dp = delta.dp + delta.dp_dbw @ db[:3] + delta.dp_dbv @ db[3:]
    return dR, dp


def vel_residual(x_i, x_j, delta, jacobians=True):
    """6-vector residual (rotation, position) of a preintegrated twist delta.

    The delta is corrected to x_i's twist biases. Returns ``r`` or
    ``(r, J_i, J_j)`` with 6x21 Jacobians.
    """
    bq = x_i.biases.twist_bias()
    dbw = bq[:3] - delta.bias_ref[:3]
    dR_c, dp_c = vel_apply_bias_update(delta, bq)
    Ri, Rj = x_i.rotation, x_j.rotation
    RiT = Ri.T
    E = dR_c.T @ RiT @ Rj
    r_R = log_so3(E)
    d_world = x_j.position - x_i.position
    r = np.concatenate([r_R, RiT @ d_world - dp_c])
    if not jacobians:
        return r

    Jri = right_jacobian_inv_so3(r_R)
    J_i = np.zeros((6, STATE_DIM))
    J_j = np.zeros((6, STATE_DIM))
    J_i[0:3, PHI] = -Jri @ Rj.T @ Ri
    J_j[0:3, PHI] = Jri
    J_i[0:3, BW] = -Jri @ E.T @ right_jacobian_so3(delta.dR_dbw @ dbw) @ delta.dR_dbw
    J_i[3:6, PHI] = skew(RiT @ d_world)
    J_i[3:6, POS] = -RiT
    J_j[3:6, POS] = RiT
    J_i[3:6, BW] = -delta.dp_dbw
    J_i[3:6, BV] = -delta.dp_dbv
    return r, J_i, J_j


def compose_vel(d1, d2):
    """Chain two noise-free deltas: (dR_ik, dp_ik, dt_ik)."""
    return d1.dR @ d2.dR, d1.dp + d1.dR @ d2.dp, d1.dt + d2.dt


def motion_of(delta):
    """(translation norm, rotation angle) summarised by a velocity delta."""
    return float(np.linalg.norm(delta.dp)), float(np.linalg.norm(log_so3(delta.dR)))
