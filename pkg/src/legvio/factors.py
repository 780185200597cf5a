"""Residual blocks of the sliding-window objective.

Every factor exposes ``keys`` and ``evaluate(values, jacobians=True)`` which
returns the raw residual and one Jacobian per key (tangent ordering from
:mod:`legvio.states`). ``linearize`` whitens both through the factor's
:class:`NoiseModel` and applies the DCS weight when the model has one.

Variable keys are tuples: ``X(i)`` for keyframe states, ``L(id)`` for
landmarks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geom import log_so3, right_jacobian_inv_so3, skew
from .preint_imu import GRAVITY, imu_residual
from .preint_velocity import vel_residual
from .states import BIAS, PHI, POS, STATE_DIM, VEL, local, local_jacobian, retract

log = logging.getLogger(__name__)

MIN_DEPTH = 1e-3


def X(i):
    return ("x", int(i))


def L(lid):
    return ("l", int(lid))


def is_state_key(key):
    return key[0] == "x"


def key_dim(key):
    return STATE_DIM if key[0] == "x" else 3


# --------------------------------------------------------------------------
# noise models and the robust kernel


def dcs_weight(r_sq, phi):
    """Dynamic covariance scaling factor ``min(1, 2 phi / (phi + r_sq))``."""
    if not np.all(np.asarray(phi) > 0):
        raise ValueError("phi must be positive")
    return np.minimum(1.0, 2.0 * phi / (phi + np.asarray(r_sq, dtype=float)))


def dcs_rho(r_sq, phi):
    """Robust cost whose derivative in ``r_sq`` is ``dcs_weight(r_sq, phi)**2``.

    Scaling the whitened residual and Jacobian by the DCS factor is then an
    iteratively reweighted Gauss-Newton step on ``1/2 sum rho(r_sq)``, which
    is the objective the solver's step acceptance must compare.
    """
    x = np.asarray(r_sq, dtype=float)
    return np.where(x <= phi, x, 3.0 * phi - 4.0 * phi * phi / (phi + x))


class NoiseModel:
    """Gaussian noise given by an upper-triangular square-root information.

    ``dcs_phi`` turns on dynamic covariance scaling for the owning factor.
    """

    def __init__(self, sqrt_info, dcs_phi=None):
        self.sqrt_info = np.atleast_2d(np.asarray(sqrt_info, dtype=float))
        self.dcs_phi = dcs_phi

    @classmethod
    def from_sigmas(cls, sigmas, dcs_phi=None):
        sigmas = np.asarray(sigmas, dtype=float)
        if np.any(sigmas <= 0):
            raise ValueError("sigmas must be positive")
        return cls(np.diag(1.0 / sigmas), dcs_phi)

    @classmethod
    def from_covariance(cls, cov, dcs_phi=None):
        cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
        info = np.linalg.inv(cov)
        info = 0.5 * (info + info.T)
        return cls(np.linalg.cholesky(info).T, dcs_phi)

    @property
    def dim(self):
        return self.sqrt_info.shape[0]

    def covariance(self):
        Wi = np.linalg.inv(self.sqrt_info)
        return Wi @ Wi.T

    def whiten(self, r):
        return self.sqrt_info @ r


class Factor:
    keys: tuple = ()
    noise: NoiseModel

    def evaluate(self, values, jacobians=True):
        raise NotImplementedError

    def linearize(self, values, with_cost=False):
        """Whitened residual and Jacobians, DCS-weighted if configured.

        With ``with_cost=True`` the factor's (robust) cost is returned too.
        """
        r, Js = self.evaluate(values, jacobians=True)
        W = self.noise.sqrt_info
        rw = W @ r
        Jw = [W @ J for J in Js]
        r2 = float(rw @ rw)
        cost = 0.5 * r2
        if self.noise.dcs_phi is not None:
            s = float(dcs_weight(r2, self.noise.dcs_phi))
            cost = 0.5 * float(dcs_rho(r2, self.noise.dcs_phi))
            rw = s * rw
            Jw = [s * J for J in Jw]
        if with_cost:
            return rw, Jw, cost
        return rw, Jw

    def whitened_error(self, values):
        """Whitened residual before any robust weighting."""
        return self.noise.sqrt_info @ self.evaluate(values, jacobians=False)

    def cost(self, values):
        rw = self.whitened_error(values)
        r2 = float(rw @ rw)
        if self.noise.dcs_phi is not None:
            return 0.5 * float(dcs_rho(r2, self.noise.dcs_phi))
        return 0.5 * r2

    @property
    def kind(self):
        return type(self).__name__


# --------------------------------------------------------------------------
# prior


def prior_residual(x0, prior, jacobians=False):
    """Chart residual ``local(prior, x0)`` (21-vector) and its Jacobian."""
    r = local(prior, x0)
    if not jacobians:
        return r
    return r, local_jacobian(prior, x0)


class PriorFactor(Factor):
    def __init__(self, key, prior, noise):
        self.keys = (key,)
        self.prior = prior
        self.noise = noise

    def evaluate(self, values, jacobians=True):
        x = values[self.keys[0]]
        if not jacobians:
            return prior_residual(x, self.prior)
        r, J = prior_residual(x, self.prior, jacobians=True)
        return r, [J]


# --------------------------------------------------------------------------
# preintegrated IMU and velocity


class ImuFactor(Factor):
    def __init__(self, key_i, key_j, delta, gravity=GRAVITY, min_sigma=1e-9):
        self.keys = (key_i, key_j)
        self.delta = delta
        self.gravity = np.asarray(gravity, dtype=float)
        cov = delta.cov + np.eye(9) * min_sigma**2
        self.noise = NoiseModel.from_covariance(cov)

    def evaluate(self, values, jacobians=True):
        xi, xj = values[self.keys[0]], values[self.keys[1]]
        if not jacobians:
            return imu_residual(xi, xj, self.delta, self.gravity, jacobians=False)
        r, Ji, Jj = imu_residual(xi, xj, self.delta, self.gravity)
        return r, [Ji, Jj]


class VelocityFactor(Factor):
    """Preintegrated leg-odometry twist factor.

    With ``use_rotation=False`` only the 3 position rows are kept.
    """

    def __init__(self, key_i, key_j, delta, use_rotation=True, min_sigma=1e-9):
        self.keys = (key_i, key_j)
        self.delta = delta
        self.use_rotation = use_rotation
        cov = delta.cov + np.eye(6) * min_sigma**2
        if not use_rotation:
            cov = cov[3:, 3:]
        self.noise = NoiseModel.from_covariance(cov)

    def evaluate(self, values, jacobians=True):
        xi, xj = values[self.keys[0]], values[self.keys[1]]
        rows = slice(0, 6) if self.use_rotation else slice(3, 6)
        if not jacobians:
            return vel_residual(xi, xj, self.delta, jacobians=False)[rows]
        r, Ji, Jj = vel_residual(xi, xj, self.delta)
        return r[rows], [Ji[rows], Jj[rows]]


# --------------------------------------------------------------------------
# bias random walk


def bias_rw_residual(b_i, b_j):
    """Concatenated differences ``b_j - b_i`` ordered (gyro, accel, ang, lin)."""
    return b_j.vector() - b_i.vector()


def bias_rw_sigmas(imu_noise, twist_noise, dt):
    """Per-component random-walk sigmas over an interval of ``dt`` seconds."""
    sq = np.sqrt(dt)
    return np.array(
        [imu_noise.gyro_walk * sq] * 3 + [imu_noise.accel_walk * sq] * 3
        + [twist_noise.ang_walk * sq] * 3 + [twist_noise.lin_walk * sq] * 3
    )


class BiasRandomWalkFactor(Factor):
    def __init__(self, key_i, key_j, sigmas):
        self.keys = (key_i, key_j)
        self.noise = NoiseModel.from_sigmas(sigmas)

    def evaluate(self, values, jacobians=True):
        xi, xj = values[self.keys[0]], values[self.keys[1]]
        r = bias_rw_residual(xi.biases, xj.biases)
        if not jacobians:
            return r
        Ji = np.zeros((12, STATE_DIM))
        Jj = np.zeros((12, STATE_DIM))
        Ji[:, BIAS] = -np.eye(12)
        Jj[:, BIAS] = np.eye(12)
        return r, [Ji, Jj]


# --------------------------------------------------------------------------
# stereo


@dataclass(frozen=True)
class StereoObservation:
    landmark_id: int
    uL: float
    uR: float
    v: float
    stamp: float = 0.0

    def vector(self):
        return np.array([self.uL, self.uR, self.v])


@dataclass(frozen=True)
class CameraModel:
    """Rectified stereo pinhole; ``R_BC, t_BC`` map camera to base coordinates."""

    fx: float = 415.0
    fy: float = 415.0
    cx: float = 424.0
    cy: float = 240.0
    baseline: float = 0.05
    R_BC: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_BC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 848
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.baseline > 0):
            raise ValueError("fx, fy and baseline must be positive")
        object.__setattr__(self, "R_BC", np.asarray(self.R_BC, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t_BC", np.asarray(self.t_BC, dtype=float).reshape(3))

    @classmethod
    def forward_looking(cls, **kw):
        """Camera optical axis along base x, image x along base -y, image y along base -z."""
        R_BC = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
        kw.setdefault("t_BC", np.array([0.3, 0.0, 0.1]))
        return cls(R_BC=R_BC, **kw)

    def to_camera(self, R, p, m):
        """Landmark(s) ``m`` in camera coordinates for base pose (R, p)."""
        return ((np.asarray(m) - p) @ R - self.t_BC) @ self.R_BC

    def project(self, pc):
        pc = np.asarray(pc, dtype=float)
        X, Y, Z = pc[..., 0], pc[..., 1], pc[..., 2]
        uL = self.fx * X / Z + self.cx
        uR = self.fx * (X - self.baseline) / Z + self.cx
        v = self.fy * Y / Z + self.cy
        return np.stack([uL, uR, v], axis=-1)

    def back_project(self, uL, uR, v):
        """Camera-frame point from a stereo measurement (None if disparity <= 0)."""
        disp = uL - uR
        if disp <= 0:
            return None
        Z = self.fx * self.baseline / disp
        return np.array([(uL - self.cx) * Z / self.fx, (v - self.cy) * Z / self.fy, Z])

    def in_image(self, uvv):
        uvv = np.asarray(uvv)
        return (
            (uvv[..., 0] >= 0) & (uvv[..., 0] < self.width)
            & (uvv[..., 1] >= 0) & (uvv[..., 1] < self.width)
            & (uvv[..., 2] >= 0) & (uvv[..., 2] < self.height)
        )


def _stereo_batch(R, p, m, meas, cam):
    """Vectorised stereo residual for n observations.

    Returns (r (n,3), J_pose (n,3,6) over [dphi, dp], J_lm (n,3,3), active (n,)).
    """
    q = np.einsum("nji,nj->ni", R, m - p)  # R^T (m - p)
    pc = (q - cam.t_BC) @ cam.R_BC
    X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
    active = Z > MIN_DEPTH
    Zs = np.where(active, Z, 1.0)
    iz = 1.0 / Zs
    pred = np.stack(
        [cam.fx * X * iz + cam.cx, cam.fx * (X - cam.baseline) * iz + cam.cx, cam.fy * Y * iz + cam.cy],
        axis=1,
    )
    r = np.where(active[:, None], pred - meas, 0.0)
    n = len(q)
    P = np.zeros((n, 3, 3))
    P[:, 0, 0] = cam.fx * iz
    P[:, 0, 2] = -cam.fx * X * iz * iz
    P[:, 1, 0] = cam.fx * iz
    P[:, 1, 2] = -cam.fx * (X - cam.baseline) * iz * iz
    P[:, 2, 1] = cam.fy * iz
    P[:, 2, 2] = -cam.fy * Y * iz * iz
    P[~active] = 0.0
    RcT = cam.R_BC.T
    q_hat = np.zeros((n, 3, 3))
    q_hat[:, 0, 1], q_hat[:, 0, 2] = -q[:, 2], q[:, 1]
    q_hat[:, 1, 0], q_hat[:, 1, 2] = q[:, 2], -q[:, 0]
    q_hat[:, 2, 0], q_hat[:, 2, 1] = -q[:, 1], q[:, 0]
    dpc_dphi = np.einsum("ij,njk->nik", RcT, q_hat)
    dpc_dm = np.einsum("ij,nkj->nik", RcT, R)  # R_BC^T R^T
    J_pose = np.empty((n, 3, 6))
    J_pose[:, :, 0:3] = P @ dpc_dphi
    J_lm = P @ dpc_dm
    J_pose[:, :, 3:6] = -J_lm
    return r, J_pose, J_lm, active


def stereo_residual(x_i, m, obs, cam, jacobians=False):
    """Predicted minus measured (uL, uR, v) for landmark position ``m``.

    Returns ``(r, active)`` or ``(r, J_state (3x21), J_landmark (3x3), active)``.
    An inactive factor (point behind the camera) has zero residual and Jacobians.
    """
    m = m.position if hasattr(m, "position") else np.asarray(m, dtype=float)
    r, Jp, Jl, active = _stereo_batch(
        x_i.rotation[None], x_i.position[None], m[None], obs.vector()[None], cam
    )
    if not jacobians:
        return r[0], bool(active[0])
    J = np.zeros((3, STATE_DIM))
    J[:, 0:6] = Jp[0]
    return r[0], J, Jl[0], bool(active[0])


class StereoFactor(Factor):
    def __init__(self, key_x, key_l, obs, cam, noise):
        self.keys = (key_x, key_l)
        self.obs = obs
        self.cam = cam
        self.noise = noise

    def evaluate(self, values, jacobians=True):
        x = values[self.keys[0]]
        m = values[self.keys[1]]
        if not jacobians:
            r, active = stereo_residual(x, m, self.obs, self.cam)
            if not active:
                log.debug("stereo factor %s inactive (depth <= %g)", self.keys, MIN_DEPTH)
            return r
        r, Jx, Jl, _ = stereo_residual(x, m, self.obs, self.cam, jacobians=True)
        return r, [Jx, Jl]

    @staticmethod
    def linearize_batch(factors, values):
        """Whitened, DCS-weighted linearization of many stereo factors at once.

        All factors must share one camera. Returns (rw (n,3), J_pose (n,3,6),
        J_lm (n,3,3), n_inactive, cost) where ``cost`` is the summed robust cost.
        """
        cam = factors[0].cam
        R = np.array([values[f.keys[0]].rotation for f in factors])
        p = np.array([values[f.keys[0]].position for f in factors])
        m = np.array([values[f.keys[1]] for f in factors])
        meas = np.array([(f.obs.uL, f.obs.uR, f.obs.v) for f in factors])
        r, Jp, Jl, active = _stereo_batch(R, p, m, meas, cam)
        W = np.array([f.noise.sqrt_info for f in factors])
        rw = np.einsum("nij,nj->ni", W, r)
        Jp = W @ Jp
        Jl = W @ Jl
        phis = np.array([np.inf if f.noise.dcs_phi is None else f.noise.dcs_phi for f in factors])
        r2 = np.einsum("ni,ni->n", rw, rw)
        robust = np.isfinite(phis)
        s = np.ones(len(factors))
        rho = r2.copy()
        if robust.any():
            s[robust] = dcs_weight(r2[robust], phis[robust])
            rho[robust] = dcs_rho(r2[robust], phis[robust])
        cost = 0.5 * float(rho.sum())
        return rw * s[:, None], Jp * s[:, None, None], Jl * s[:, None, None], int((~active).sum()), cost


# --------------------------------------------------------------------------
# zero velocity


def zero_velocity_residual(x_i):
    return x_i.velocity.copy()


class ZeroVelocityFactor(Factor):
    def __init__(self, key, sigma=1e-3):
        self.keys = (key,)
        self.noise = NoiseModel.from_sigmas([sigma] * 3)

    def evaluate(self, values, jacobians=True):
        r = zero_velocity_residual(values[self.keys[0]])
        if not jacobians:
            return r
        J = np.zeros((3, STATE_DIM))
        J[:, VEL] = np.eye(3)
        return r, [J]


class PoseHoldFactor(Factor):
    """Relative pose between a stationary pair held at identity."""

    def __init__(self, key_i, key_j, rot_sigma=1e-3, pos_sigma=1e-4):
        self.keys = (key_i, key_j)
        self.noise = NoiseModel.from_sigmas([rot_sigma] * 3 + [pos_sigma] * 3)

    def evaluate(self, values, jacobians=True):
        xi, xj = values[self.keys[0]], values[self.keys[1]]
        RiT = xi.rotation.T
        r_R = log_so3(RiT @ xj.rotation)
        d = xj.position - xi.position
        r = np.concatenate([r_R, RiT @ d])
        if not jacobians:
            return r
        Jri = right_jacobian_inv_so3(r_R)
        Ji = np.zeros((6, STATE_DIM))
        Jj = np.zeros((6, STATE_DIM))
        Ji[0:3, PHI] = -Jri @ xj.rotation.T @ xi.rotation
        Jj[0:3, PHI] = Jri
        Ji[3:6, PHI] = skew(RiT @ d)
        Ji[3:6, POS] = -RiT
        Jj[3:6, POS] = RiT
        return r, [Ji, Jj]


# --------------------------------------------------------------------------
# marginalization prior


class LinearizedFactor(Factor):
    """Gaussian ``1/2 d^T H d + g^T d`` over a set of keys, in tangent space at ``lin_values``.

    Stored in square-root form ``r = A d + b`` with ``A^T A = H`` and
    ``A^T b = g``; directions with negligible information are dropped.
    """

    def __init__(self, keys, lin_values, H, g, rel_eps=1e-12):
        self.keys = tuple(keys)
        self.lin_values = {k: lin_values[k] for k in self.keys}
        H = 0.5 * (H + H.T)
        lam, V = np.linalg.eigh(H)
        keep = lam > rel_eps * max(lam.max(), 0.0)
        sq = np.sqrt(lam[keep])
        self.A = sq[:, None] * V[:, keep].T
        self.b = (V[:, keep].T @ g) / sq
        self.noise = NoiseModel(np.eye(len(sq)))
        self.dims = [key_dim(k) for k in self.keys]

    def _delta(self, values):
        parts, jacs = [], []
        for k in self.keys:
            x0, x = self.lin_values[k], values[k]
            if is_state_key(k):
                parts.append(local(x0, x))
                jacs.append(local_jacobian(x0, x))
            else:
                parts.append(np.asarray(x) - x0)
                jacs.append(np.eye(3))
        return np.concatenate(parts), jacs

    def evaluate(self, values, jacobians=True):
        d, jacs = self._delta(values)
        r = self.A @ d + self.b
        if not jacobians:
            return r
        out, c = [], 0
        for dim, Jl in zip(self.dims, jacs):
            out.append(self.A[:, c:c + dim] @ Jl)
            c += dim
        return r, out


def retract_value(key, value, delta):
    if is_state_key(key):
        return retract(value, delta)
    return np.asarray(value) + delta
