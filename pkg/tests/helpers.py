"""Shared oracles for the test suite."""

import numpy as np

from legvio.factors import NoiseModel, StereoFactor, StereoObservation, L, X
from legvio.preint_imu import imu_residual, integrate_samples
from legvio.preint_velocity import integrate_twists, vel_residual


def interval_residuals(ds):
    """Largest IMU and velocity residual norms over consecutive camera frames, using ground truth."""
    imu = ds.imu_samples()
    tw = ds.twist_measurements()
    cs = ds.camera_stamps
    ei = np.searchsorted(ds.imu_stamps, cs, side="right")
    et = np.searchsorted(ds.twist_stamps, cs, side="right")
    worst_imu = worst_vel = 0.0
    for k in range(1, len(cs)):
        xi, xj = ds.gt_state_at(cs[k - 1]), ds.gt_state_at(cs[k])
        d = integrate_samples(imu[ei[k - 1]:ei[k]], cs[k - 1], xi.biases)
        worst_imu = max(worst_imu, np.linalg.norm(imu_residual(xi, xj, d, ds.gravity, jacobians=False)))
        dv = integrate_twists(tw[et[k - 1]:et[k]], cs[k - 1], xi.biases.twist_bias())
        worst_vel = max(worst_vel, np.linalg.norm(vel_residual(xi, xj, dv, jacobians=False)))
    return worst_imu, worst_vel


def stereo_residuals(ds):
    """Raw reprojection residual norm of every observation at its ground-truth pose."""
    unit = NoiseModel.from_sigmas([1.0] * 3)
    frames = np.searchsorted(ds.camera_stamps, ds.stereo[:, 0] - 1e-9)
    gt = gt_at(ds, ds.camera_stamps)
    values = {X(k): gt.state(k) for k in range(len(gt))}
    values.update({L(i): p for i, p in ds.landmark_map().items()})
    factors = [
        StereoFactor(X(k), L(int(lid)), StereoObservation(int(lid), uL, uR, v, t), ds.camera, unit)
        for k, (t, lid, uL, uR, v) in zip(frames, ds.stereo)
    ]
    rw = StereoFactor.linearize_batch(factors, values)[0]
    return np.linalg.norm(rw, axis=1)


def gt_at(ds, stamps):
    return ds.gt.subset(ds.gt.index_of(stamps))


def window_graph(ds, n, stereo=True, prior_sigmas=None, dcs_phi=None):
    """Factor graph over the first ``n`` camera frames with ground-truth values.

    Returns (graph, values). ``prior_sigmas`` holds the 7 per-block sigmas
    (rot, pos, vel, bg, ba, bw, bv) of the prior on the first state.
    """
    from legvio.factors import (
        BiasRandomWalkFactor, ImuFactor, PriorFactor, VelocityFactor, bias_rw_sigmas,
    )
    from legvio.solver import FactorGraph

    cs = ds.camera_stamps[:n]
    imu = ds.imu_samples()
    tw = ds.twist_measurements()
    ei = np.searchsorted(ds.imu_stamps, cs, side="right")
    et = np.searchsorted(ds.twist_stamps, cs, side="right")
    gt = gt_at(ds, cs)
    values = {X(k): gt.state(k) for k in range(n)}
    sig = prior_sigmas or (1e-3, 1e-3, 1e-2, 1e-2, 1e-1, 1e-2, 1e-1)
    g = FactorGraph()
    g.add(PriorFactor(X(0), values[X(0)], NoiseModel.from_sigmas(np.repeat(sig, 3))))
    for k in range(1, n):
        xi = values[X(k - 1)]
        d = integrate_samples(imu[ei[k - 1]:ei[k]], cs[k - 1], xi.biases, ds.imu_noise)
        dv = integrate_twists(tw[et[k - 1]:et[k]], cs[k - 1], xi.biases.twist_bias(), ds.twist_noise)
        g.add(ImuFactor(X(k - 1), X(k), d, ds.gravity))
        g.add(VelocityFactor(X(k - 1), X(k), dv))
        g.add(BiasRandomWalkFactor(X(k - 1), X(k), bias_rw_sigmas(ds.imu_noise, ds.twist_noise, cs[k] - cs[k - 1])))
    if stereo:
        noise = NoiseModel.from_sigmas([ds.pixel_sigma] * 3, dcs_phi=dcs_phi)
        lm = ds.landmark_map()
        for k, t in enumerate(cs):
            for _, lid, uL, uR, v in ds.observations_at(t):
                key = L(int(lid))
                values[key] = lm[int(lid)]
                g.add(StereoFactor(X(k), key, StereoObservation(int(lid), uL, uR, v, t), ds.camera, noise))
    return g, values


def dense_normal_equations(graph, values, keys):
    """Brute-force ``(J^T J, J^T r)`` over ``keys`` from per-factor linearizations."""
    from legvio.factors import key_dim

    offs, n = {}, 0
    for k in keys:
        offs[k] = n
        n += key_dim(k)
    rows, rhs = [], []
    for f in graph.factors:
        rw, Jw = f.linearize(values)
        J = np.zeros((len(rw), n))
        for k, Jk in zip(f.keys, Jw):
            J[:, offs[k]:offs[k] + key_dim(k)] = Jk
        rows.append(J)
        rhs.append(rw)
    J = np.vstack(rows)
    r = np.concatenate(rhs)
    H = J.T @ J
    for key, dims in graph.frozen.items():
        idx = offs[key] + dims
        H[idx, :] = 0.0
        H[:, idx] = 0.0
        H[idx, idx] = 1.0
    g = J.T @ r
    for key, dims in graph.frozen.items():
        g[offs[key] + dims] = 0.0
    return H, g, offs
