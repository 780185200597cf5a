"""Trajectory metrics (RPE over distance, aligned ATE), drift fitting and plots."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.spatial.transform import Rotation


@dataclass
class RpeReport:
    distance: float
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    start_stamps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def empty(self):
        return len(self.errors) == 0

    @property
    def mean(self):
        return float(np.mean(self.errors)) if len(self.errors) else float("nan")

    @property
    def std(self):
        return float(np.std(self.errors)) if len(self.errors) else float("nan")

    def as_dict(self):
        return {"distance": self.distance, "count": int(len(self.errors)), "mean": self.mean,
                "std": self.std, "empty": self.empty}


def _overlap(estimate, ground_truth):
    """Estimate samples inside the ground-truth span and GT interpolated there."""
    t = estimate.stamps
    keep = (t >= ground_truth.stamps[0] - 1e-9) & (t <= ground_truth.stamps[-1] + 1e-9)
    if not keep.any():
        raise ValueError("estimate and ground truth do not overlap in time")
    est = estimate.subset(np.flatnonzero(keep))
    return est, ground_truth.interpolate(est.stamps)


def rpe(estimate, ground_truth, distance=10.0, stride=1):
    """Translational relative pose error over ``distance`` metres of travel.

    For every ``stride``-th estimate sample i the end sample j is the first
    one at least ``distance`` further along the ground-truth path. The error
    is the translation of ``(T_gt_i^-1 T_gt_j)^-1 (T_est_i^-1 T_est_j)``.
    """
    if not distance > 0:
        raise ValueError("distance must be positive")
    est, gt = _overlap(estimate, ground_truth)
    s = gt.path_length()
    ends = np.searchsorted(s, s + distance - 1e-12, side="left")
    errs, starts = [], []
    for i in range(0, len(est), stride):
        j = ends[i]
        if j >= len(est):
            break
        Rg_i, Rg_j = gt.rotations[i], gt.rotations[j]
        Re_i = est.rotations[i]
        t_gt = Rg_i.T @ (gt.positions[j] - gt.positions[i])
        t_est = Re_i.T @ (est.positions[j] - est.positions[i])
        R_gt_rel = Rg_i.T @ Rg_j
        errs.append(np.linalg.norm(R_gt_rel.T @ (t_est - t_gt)))
        starts.append(est.stamps[i])
    return RpeReport(distance, np.array(errs), np.array(starts))


def align_rigid(source, target):
    """Rotation R and translation t minimising ``sum |target - (R source + t)|^2``."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    mu_s, mu_t = source.mean(0), target.mean(0)
    with warnings.catch_warnings():
        # collinear paths leave the roll about the line free; any minimiser will do
        warnings.simplefilter("ignore", UserWarning)
        rot, _ = Rotation.align_vectors(target - mu_t, source - mu_s)
    R = rot.as_matrix()
    return R, mu_t - R @ mu_s


def ate_aligned(estimate, ground_truth):
    """RMSE of estimated positions after rigid alignment to ground truth."""
    est, gt = _overlap(estimate, ground_truth)
    if len(est) < 3:
        raise ValueError("at least 3 poses are needed for an aligned ATE")
    R, t = align_rigid(est.positions, gt.positions)
    d = gt.positions - (est.positions @ R.T + t)
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", d, d))))


@dataclass
class DriftFit:
    slope: float
    intercept: float
    r2: float


def fit_linear_drift(stamps, errors):
    """Least-squares line through an error series (at least 10 samples)."""
    t = np.asarray(stamps, dtype=float)
    e = np.asarray(errors, dtype=float)
    if t.shape != e.shape or t.ndim != 1:
        raise ValueError("stamps and errors must be 1-D and of equal length")
    if len(t) < 10:
        raise ValueError("at least 10 samples are needed for a drift fit")
    fit = stats.linregress(t, e)
    r2 = 1.0 if np.ptp(e) == 0.0 else float(fit.rvalue**2)
    return DriftFit(float(fit.slope), float(fit.intercept), r2)


def altitude_error(estimate, ground_truth):
    """(stamps, z_est - z_gt) on the estimate's stamps."""
    est, gt = _overlap(estimate, ground_truth)
    return est.stamps, est.positions[:, 2] - gt.positions[:, 2]


def evaluate(estimate, ground_truth, distance=10.0):
    """Summary dictionary used by the command line and demos."""
    report = rpe(estimate, ground_truth, distance)
    t, dz = altitude_error(estimate, ground_truth)
    out = {"rpe": report.as_dict(), "samples": int(len(t))}
    out["ate"] = ate_aligned(estimate, ground_truth) if len(t) >= 3 else None
    if len(t) >= 10:
        fit = fit_linear_drift(t, dz)
        out["altitude_drift"] = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2}
    else:
        out["altitude_drift"] = None
    return out


def plot_report(estimate, ground_truth, out_dir, bias_stamps=None, biases=None, label="estimate"):
    """Write trajectory.svg, altitude.svg and (with biases) bias.svg; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    est, gt = _overlap(estimate, ground_truth)

    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(ground_truth.positions[:, 0], ground_truth.positions[:, 1], "k-", lw=1, label="ground truth")
    ax.plot(est.positions[:, 0], est.positions[:, 1], "-", lw=1, label=label)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    paths.append(os.path.join(out_dir, "trajectory.svg"))
    fig.savefig(paths[-1])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(gt.stamps, gt.positions[:, 2], "k-", lw=1, label="ground truth")
    ax.plot(est.stamps, est.positions[:, 2], "-", lw=1, label=label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("z [m]")
    ax.legend()
    paths.append(os.path.join(out_dir, "altitude.svg"))
    fig.savefig(paths[-1])
    plt.close(fig)

    if biases is not None and bias_stamps is not None:
        biases = np.asarray(biases)
        fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        for c, name in enumerate("xyz"):
            axes[0].plot(bias_stamps, biases[:, 9 + c], lw=1, label=f"b_v {name}")
            axes[1].plot(bias_stamps, biases[:, 6 + c], lw=1, label=f"b_w {name}")
        axes[0].set_ylabel("linear [m/s]")
        axes[1].set_ylabel("angular [rad/s]")
        axes[1].set_xlabel("time [s]")
        axes[0].legend(fontsize="small")
        axes[1].legend(fontsize="small")
        paths.append(os.path.join(out_dir, "bias.svg"))
        fig.savefig(paths[-1])
        plt.close(fig)
    return paths
