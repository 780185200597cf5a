"""Dataset, trajectory and config files.

A dataset directory holds one comma-separated file per stream, each with a
single header line, plus ``meta.json`` for sensor models::

    imu.csv        stamp,gx,gy,gz,ax,ay,az
    twist.csv      stamp,wx,wy,wz,vx,vy,vz
    stereo.csv     stamp,landmark_id,uL,uR,v
    landmarks.csv  id,x,y,z
    gt.csv         trajectory columns (see TRAJ_COLUMNS)

Numbers are written with 17 significant digits so a write/read round trip
reproduces every float bit for bit. Trajectory files carry the orientation
as a unit quaternion (w, x, y, z) and additionally the nine rotation-matrix
entries, which the reader prefers when present so that rotations also round
trip exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .factors import CameraModel
from .geom import quat_to_rot, rot_to_quat
from .pipeline import PipelineConfig, ZeroVelocityThresholds
from .preint_imu import ImuNoiseSpec
from .preint_velocity import TwistNoiseSpec
from .simulator import BiasSchedule, SimConfig, SimDataset, TrajectorySpec
from .solver import SolverConfig
from .trajectory import Trajectory

FLOAT_FMT = "%.17g"

IMU_COLUMNS = ["stamp", "gx", "gy", "gz", "ax", "ay", "az"]
TWIST_COLUMNS = ["stamp", "wx", "wy", "wz", "vx", "vy", "vz"]
STEREO_COLUMNS = ["stamp", "landmark_id", "uL", "uR", "v"]
LANDMARK_COLUMNS = ["id", "x", "y", "z"]
POSE_COLUMNS = ["stamp", "px", "py", "pz", "qw", "qx", "qy", "qz"]
MATRIX_COLUMNS = [f"r{i}{j}" for i in range(3) for j in range(3)]
VEL_COLUMNS = ["vx", "vy", "vz"]
BIAS_COLUMNS = [f"{b}_{c}" for b in ("bg", "ba", "bw", "bv") for c in "xyz"]
TRAJ_COLUMNS = POSE_COLUMNS + VEL_COLUMNS + BIAS_COLUMNS + MATRIX_COLUMNS


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and line."""


# --------------------------------------------------------------------------
# tables


def write_table(path, columns, data):
    data = np.asarray(data, dtype=float).reshape(-1, len(columns))
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in data:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_table(path, required=None):
    """Read a header + numeric rows file; returns (columns, array)."""
    try:
        fh = open(path)
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        header = fh.readline()
        if not header.strip():
            raise DataFormatError(f"{path}:1: missing header line")
        columns = [c.strip() for c in header.strip().split(",")]
        if required is not None:
            missing = [c for c in required if c not in columns]
            if missing:
                raise DataFormatError(f"{path}:1: missing columns {missing}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != len(columns):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(columns)} fields, found {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if not all(np.isfinite(vals)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    return columns, np.array(rows, dtype=float).reshape(-1, len(columns))


def _select(path, columns, data, wanted):
    idx = [columns.index(c) for c in wanted]
    return data[:, idx]


def _check_sorted(path, stamps):
    bad = np.flatnonzero(np.diff(stamps) < 0)
    if bad.size:
        raise DataFormatError(f"{path}:{bad[0] + 3}: stamps are not time-ordered")


# --------------------------------------------------------------------------
# trajectories


def write_trajectory(path, traj):
    n = len(traj)
    q = np.array([rot_to_quat(R) for R in traj.rotations]).reshape(n, 4)
    vel = traj.velocities if traj.velocities is not None else np.zeros((n, 3))
    bias = traj.biases if traj.biases is not None else np.zeros((n, 12))
    data = np.hstack([traj.stamps[:, None], traj.positions, q, vel, bias, traj.rotations.reshape(n, 9)])
    write_table(path, TRAJ_COLUMNS, data)


def read_trajectory(path):
    columns, data = read_table(path, required=POSE_COLUMNS)
    stamps = data[:, columns.index("stamp")]
    _check_sorted(path, stamps)
    pos = _select(path, columns, data, ["px", "py", "pz"])
    if all(c in columns for c in MATRIX_COLUMNS):
        rot = _select(path, columns, data, MATRIX_COLUMNS).reshape(-1, 3, 3)
    else:
        q = _select(path, columns, data, ["qw", "qx", "qy", "qz"])
        norms = np.linalg.norm(q, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if bad.size:
            raise DataFormatError(f"{path}:{bad[0] + 2}: quaternion norm {norms[bad[0]]:.9g} is not 1")
        rot = np.array([quat_to_rot(x) for x in q]).reshape(-1, 3, 3)
    vel = _select(path, columns, data, VEL_COLUMNS) if all(c in columns for c in VEL_COLUMNS) else None
    bias = _select(path, columns, data, BIAS_COLUMNS) if all(c in columns for c in BIAS_COLUMNS) else None
    return Trajectory(stamps, rot, pos, vel, bias)


def write_bias_trace(path, stamps, biases):
    write_table(path, ["stamp"] + BIAS_COLUMNS, np.hstack([np.asarray(stamps)[:, None], biases]))


def read_bias_trace(path):
    columns, data = read_table(path, required=["stamp"] + BIAS_COLUMNS)
    return data[:, columns.index("stamp")], _select(path, columns, data, BIAS_COLUMNS)


# --------------------------------------------------------------------------
# config dictionaries


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _build(cls, d, nested=None, where=""):
    """Dataclass from a dict, rejecting unknown keys."""
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise DataFormatError(f"{where or cls.__name__}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise DataFormatError(f"{where or cls.__name__}: unknown keys {unknown}")
    kw = {}
    for k, v in d.items():
        if nested and k in nested:
            v = nested[k](v)
        elif isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{where or cls.__name__}: {exc}") from exc


def camera_from_dict(d):
    d = dict(d or {})
    if d.pop("forward_looking", True):
        extra = {k: np.asarray(v) if k in ("R_BC", "t_BC") else v for k, v in d.items()}
        try:
            return CameraModel.forward_looking(**extra)
        except TypeError as exc:
            raise DataFormatError(f"camera: {exc}") from exc
    return _build(CameraModel, d, {"R_BC": np.asarray, "t_BC": np.asarray}, "camera")


def camera_to_dict(cam):
    d = _to_plain(cam)
    d["forward_looking"] = False
    return d


def imu_noise_from_dict(d):
    return _build(ImuNoiseSpec, d, {"gravity": np.asarray}, "imu_noise")


def twist_noise_from_dict(d):
    return _build(TwistNoiseSpec, d, None, "twist_noise")


def sim_config_from_dict(d):
    d = dict(d or {})
    biases = d.pop("biases", {}) or {}
    if not isinstance(biases, dict):
        raise DataFormatError("biases: expected an object")
    bad = sorted(set(biases) - {"gyro", "accel", "ang_vel", "lin_vel"})
    if bad:
        raise DataFormatError(f"biases: unknown streams {bad}")
    cfg = _build(SimConfig, d, {
        "trajectory": lambda v: _build(TrajectorySpec, v, {"waypoints": _listify_waypoints}, "trajectory"),
        "camera": camera_from_dict,
        "imu_noise": imu_noise_from_dict,
        "twist_noise": twist_noise_from_dict,
        "stationary": lambda v: [tuple(x) for x in v],
        "puddle": lambda v: None if v is None else tuple(v),
    }, "simulation config")
    cfg.biases = {k: _build(BiasSchedule, v, None, f"biases.{k}") for k, v in biases.items()}
    return cfg


def _listify_waypoints(v):
    return [list(map(float, w)) for w in v or []]


def sim_config_to_dict(cfg):
    d = _to_plain(cfg)
    d["camera"] = camera_to_dict(cfg.camera)
    return d


def pipeline_config_from_dict(d):
    return _build(PipelineConfig, d, {
        "solver": lambda v: _build(SolverConfig, v, None, "solver"),
        "zv_thresholds": lambda v: _build(ZeroVelocityThresholds, v, None, "zv_thresholds"),
    }, "pipeline config")


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}:{exc.lineno}: {exc.msg}") from exc


# --------------------------------------------------------------------------
# datasets


def write_dataset(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    p = lambda name: os.path.join(out_dir, name)  # noqa: E731
    write_table(p("imu.csv"), IMU_COLUMNS, np.hstack([ds.imu_stamps[:, None], ds.imu_gyro, ds.imu_accel]))
    write_table(p("twist.csv"), TWIST_COLUMNS, np.hstack([ds.twist_stamps[:, None], ds.twist_ang, ds.twist_lin]))
    write_table(p("stereo.csv"), STEREO_COLUMNS, ds.stereo)
    write_table(p("landmarks.csv"), LANDMARK_COLUMNS,
                np.hstack([ds.landmark_ids[:, None].astype(float), ds.landmark_positions]))
    write_trajectory(p("gt.csv"), ds.gt)
    meta = {
        "camera": camera_to_dict(ds.camera),
        "camera_stamps": ds.camera_stamps.tolist(),
        "imu_noise": _to_plain(ds.imu_noise),
        "twist_noise": _to_plain(ds.twist_noise),
        "pixel_sigma": ds.pixel_sigma,
        "stationary": [list(s) for s in ds.stationary],
        "meta": _to_plain(ds.meta),
    }
    with open(p("meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def read_dataset(in_dir):
    p = lambda name: os.path.join(in_dir, name)  # noqa: E731
    meta = load_json(p("meta.json"))
    for key in ("camera", "camera_stamps", "imu_noise", "twist_noise", "pixel_sigma"):
        if key not in meta:
            raise DataFormatError(f"{p('meta.json')}: missing key {key!r}")
    c, imu = read_table(p("imu.csv"), IMU_COLUMNS)
    imu = _select(p("imu.csv"), c, imu, IMU_COLUMNS)
    _check_sorted(p("imu.csv"), imu[:, 0])
    c, tw = read_table(p("twist.csv"), TWIST_COLUMNS)
    tw = _select(p("twist.csv"), c, tw, TWIST_COLUMNS)
    _check_sorted(p("twist.csv"), tw[:, 0])
    c, st = read_table(p("stereo.csv"), STEREO_COLUMNS)
    st = _select(p("stereo.csv"), c, st, STEREO_COLUMNS)
    _check_sorted(p("stereo.csv"), st[:, 0])
    c, lm = read_table(p("landmarks.csv"), LANDMARK_COLUMNS)
    lm = _select(p("landmarks.csv"), c, lm, LANDMARK_COLUMNS)
    known = set(lm[:, 0].astype(int).tolist())
    unknown = np.flatnonzero([int(i) not in known for i in st[:, 1]])
    if unknown.size:
        raise DataFormatError(f"{p('stereo.csv')}:{unknown[0] + 2}: unknown landmark id {int(st[unknown[0], 1])}")
    gt = read_trajectory(p("gt.csv"))
    return SimDataset(
        gt=gt,
        imu_stamps=imu[:, 0].copy(),
        imu_gyro=imu[:, 1:4].copy(),
        imu_accel=imu[:, 4:7].copy(),
        twist_stamps=tw[:, 0].copy(),
        twist_ang=tw[:, 1:4].copy(),
        twist_lin=tw[:, 4:7].copy(),
        camera_stamps=np.asarray(meta["camera_stamps"], dtype=float),
        stereo=st,
        landmark_ids=lm[:, 0].astype(int),
        landmark_positions=lm[:, 1:4].copy(),
        camera=camera_from_dict(meta["camera"]),
        imu_noise=imu_noise_from_dict(meta["imu_noise"]),
        twist_noise=twist_noise_from_dict(meta["twist_noise"]),
        pixel_sigma=float(meta["pixel_sigma"]),
        stationary=[tuple(s) for s in meta.get("stationary", [])],
        meta=meta.get("meta", {}),
    )


def write_run(result, out_dir):
    """Estimator outputs: est.csv (keyframes), propagated.csv, bias.csv, filtered.csv."""
    os.makedirs(out_dir, exist_ok=True)
    write_trajectory(os.path.join(out_dir, "est.csv"), result.optimized)
    write_trajectory(os.path.join(out_dir, "filtered.csv"), result.filtered)
    write_trajectory(os.path.join(out_dir, "propagated.csv"), result.propagated)
    write_bias_trace(os.path.join(out_dir, "bias.csv"), result.bias_stamps, result.bias_trace)
