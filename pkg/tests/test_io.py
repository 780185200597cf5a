import filecmp
import json

import numpy as np
import pytest

from legvio import generate, scenarios
from legvio.io import (
    DataFormatError,
    load_json,
    pipeline_config_from_dict,
    read_dataset,
    read_trajectory,
    sim_config_from_dict,
    sim_config_to_dict,
    write_dataset,
    write_trajectory,
)


@pytest.fixture(scope="module")
def dataset():
    return generate(scenarios.biased_twist(duration=1.0))


def test_dataset_round_trip_is_bit_identical(dataset, tmp_path):
    write_dataset(dataset, tmp_path / "a")
    back = read_dataset(tmp_path / "a")
    for name in ("imu_stamps", "imu_gyro", "imu_accel", "twist_stamps", "twist_ang", "twist_lin",
                 "camera_stamps", "stereo", "landmark_ids", "landmark_positions"):
        np.testing.assert_array_equal(getattr(back, name), getattr(dataset, name))
    for name in ("stamps", "rotations", "positions", "velocities", "biases"):
        np.testing.assert_array_equal(getattr(back.gt, name), getattr(dataset.gt, name))
    assert back.camera.fx == dataset.camera.fx
    np.testing.assert_array_equal(back.camera.R_BC, dataset.camera.R_BC)
    write_dataset(back, tmp_path / "b")
    for f in ("imu.csv", "twist.csv", "stereo.csv", "landmarks.csv", "gt.csv", "meta.json"):
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)


def test_quaternion_only_trajectory(dataset, tmp_path):
    path = tmp_path / "t.csv"
    write_trajectory(path, dataset.gt.subset(np.arange(0, 400, 40)))
    lines = path.read_text().splitlines()
    cols = lines[0].split(",")
    keep = [i for i, c in enumerate(cols) if not c.startswith("r")]
    trimmed = "\n".join(",".join(line.split(",")[i] for i in keep) for line in lines) + "\n"
    path.write_text(trimmed)
    traj = read_trajectory(path)
    np.testing.assert_allclose(traj.rotations, dataset.gt.rotations[0:400:40], atol=1e-15)


def test_malformed_line_reports_line_number(dataset, tmp_path):
    write_dataset(dataset, tmp_path)
    lines = (tmp_path / "imu.csv").read_text().splitlines()
    lines[4] = lines[4].replace(",", ",x", 1)
    (tmp_path / "imu.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match=r"imu\.csv:5:"):
        read_dataset(tmp_path)


def test_wrong_field_count_and_order(dataset, tmp_path):
    write_dataset(dataset, tmp_path)
    lines = (tmp_path / "twist.csv").read_text().splitlines()
    lines[2] += ",1"
    (tmp_path / "twist.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match=r"twist\.csv:3: expected 7 fields"):
        read_dataset(tmp_path)
    write_dataset(dataset, tmp_path)
    lines = (tmp_path / "imu.csv").read_text().splitlines()
    lines[3], lines[4] = lines[4], lines[3]
    (tmp_path / "imu.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match="not time-ordered"):
        read_dataset(tmp_path)


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(DataFormatError, match="cannot open"):
        read_dataset(tmp_path)
    (tmp_path / "c.json").write_text("{\n  \"seed\": ,\n}")
    with pytest.raises(DataFormatError, match=r"c\.json:2:"):
        load_json(tmp_path / "c.json")


def test_unknown_config_keys_are_rejected():
    with pytest.raises(DataFormatError, match="unknown keys"):
        sim_config_from_dict({"seeed": 1})
    with pytest.raises(DataFormatError, match="unknown keys"):
        sim_config_from_dict({"trajectory": {"kind": "loop", "speeed": 2}})
    with pytest.raises(DataFormatError, match="unknown keys"):
        pipeline_config_from_dict({"solver": {"max_state": 5}})
    with pytest.raises(DataFormatError):
        pipeline_config_from_dict({"mode": "magic"})


def test_config_round_trip():
    cfg = scenarios.slippery(duration=5.0)
    d = sim_config_to_dict(cfg)
    json.dumps(d)
    back = sim_config_from_dict(d)
    assert back.twist_noise == cfg.twist_noise
    assert back.biases["lin_vel"].rate == cfg.biases["lin_vel"].rate
    assert back.trajectory == cfg.trajectory
    p = pipeline_config_from_dict({"mode": "vrp", "solver": {"max_states": 7}, "zv_thresholds": {"pixels": 2}})
    assert p.mode == "vrp" and p.solver.max_states == 7 and p.zv_thresholds.pixels == 2
