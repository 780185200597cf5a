import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from legvio.geom import (
    exp_so3,
    is_rotation,
    log_so3,
    project_to_so3,
    quat_to_rot,
    right_jacobian_inv_so3,
    right_jacobian_so3,
    rot_to_quat,
    rot_z,
    skew,
    vee,
)

vec3 = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


def ball(radius):
    """Vectors with norm in (0, radius)."""
    return st.tuples(vec3, st.floats(1e-6, 1.0)).filter(lambda t: np.linalg.norm(t[0]) > 1e-3).map(
        lambda t: t[0] / np.linalg.norm(t[0]) * radius * t[1])


def test_exp_zero_is_identity():
    assert np.array_equal(exp_so3(np.zeros(3)), np.eye(3))


def test_exp_quarter_turn_about_z_matches_quaternion():
    R = exp_so3([0.0, 0.0, np.pi / 2])
    oracle = Rotation.from_quat([0.0, 0.0, np.sin(np.pi / 4), np.cos(np.pi / 4)]).as_matrix()
    np.testing.assert_allclose(R, oracle, atol=1e-15)
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_exp_inverse():
    phi = np.array([0.4, -1.1, 0.7])
    np.testing.assert_allclose(exp_so3(phi) @ exp_so3(-phi), np.eye(3), atol=1e-15)


def test_log_identity_and_round_trip():
    np.testing.assert_array_equal(log_so3(np.eye(3)), np.zeros(3))
    np.testing.assert_allclose(log_so3(exp_so3([0.1, -0.2, 0.3])), [0.1, -0.2, 0.3], atol=1e-10)


def test_log_at_pi_uses_symmetric_branch():
    R = np.diag([-1.0, -1.0, 1.0])
    phi, branch = log_so3(R, return_branch=True)
    assert abs(np.linalg.norm(phi) - np.pi) < 1e-7
    assert branch == "near_pi"
    np.testing.assert_allclose(exp_so3(phi), R, atol=1e-12)


def test_small_angle_branches():
    phi = np.array([1e-10, -2e-10, 3e-10])
    np.testing.assert_allclose(log_so3(exp_so3(phi)), phi, rtol=1e-6)
    np.testing.assert_allclose(right_jacobian_so3(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(right_jacobian_inv_so3(np.zeros(3)), np.eye(3))


def _jr_fd(phi, h=1e-5):
    """Columns of J_r from exp(phi + d) = exp(phi) exp(J_r d), by central differences."""
    J = np.zeros((3, 3))
    R0 = exp_so3(phi)
    for c in range(3):
        d = np.zeros(3)
        d[c] = h
        J[:, c] = (log_so3(R0.T @ exp_so3(phi + d)) - log_so3(R0.T @ exp_so3(phi - d))) / (2 * h)
    return J


def test_right_jacobian_matches_finite_differences():
    np.testing.assert_allclose(right_jacobian_so3([0.3, 0.0, 0.0]), _jr_fd(np.array([0.3, 0.0, 0.0])), atol=1e-6)


def test_right_jacobian_deviation_is_first_order():
    d1 = np.linalg.norm(right_jacobian_so3([1e-3, 0, 0]) - np.eye(3))
    d2 = np.linalg.norm(right_jacobian_so3([2e-3, 0, 0]) - np.eye(3))
    assert 1.9 < d2 / d1 < 2.1


def test_skew_examples():
    np.testing.assert_array_equal(skew([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])
    v = np.array([0.3, -2.0, 1.5])
    np.testing.assert_array_equal(skew(v).T, -skew(v))
    np.testing.assert_allclose(skew(v) @ v, np.zeros(3), atol=1e-15)
    np.testing.assert_array_equal(vee(skew(v)), v)


def test_quaternion_round_trip_and_helpers():
    R = exp_so3([0.2, 0.5, -0.4])
    q = rot_to_quat(R)
    assert q[0] >= 0 and abs(np.linalg.norm(q) - 1) < 1e-12
    np.testing.assert_allclose(quat_to_rot(q), R, atol=1e-14)
    np.testing.assert_allclose(rot_z(0.3), exp_so3([0, 0, 0.3]), atol=1e-15)
    noisy = R + 1e-6 * np.arange(9).reshape(3, 3)
    assert not is_rotation(noisy)
    assert is_rotation(project_to_so3(noisy))


@settings(max_examples=200, deadline=None)
@given(ball(np.pi - 1e-3))
def test_log_exp_round_trip(phi):
    np.testing.assert_allclose(log_so3(exp_so3(phi)), phi, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(ball(np.pi))
def test_exp_is_orthonormal(phi):
    R = exp_so3(phi)
    assert np.abs(R @ R.T - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1) < 1e-12


@settings(max_examples=100, deadline=None)
@given(ball(2.5))
def test_right_jacobian_defining_relation(phi):
    np.testing.assert_allclose(right_jacobian_so3(phi), _jr_fd(phi), atol=1e-6)
    np.testing.assert_allclose(right_jacobian_inv_so3(phi) @ right_jacobian_so3(phi), np.eye(3), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3)
def test_skew_is_cross_product(v, w):
    np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-12)
