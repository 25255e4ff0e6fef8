import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from insalign.so3 import (
    dcm_to_euler,
    euler_to_dcm,
    is_rotation,
    project_to_so3,
    rotation_angle,
    skew,
    so3_exp,
    so3_log,
    unskew,
)

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def test_skew_zero():
    np.testing.assert_array_equal(skew(np.zeros(3)), np.zeros((3, 3)))


def test_skew_basis():
    np.testing.assert_array_equal(skew([0, 0, 1]) @ np.array([1.0, 0, 0]), [0, 1, 0])


def test_skew_matches_componentwise_cross(rng):
    for _ in range(100):
        v, w = rng.standard_normal((2, 3))
        cross = np.array([v[1] * w[2] - v[2] * w[1], v[2] * w[0] - v[0] * w[2], v[0] * w[1] - v[1] * w[0]])
        np.testing.assert_allclose(skew(v) @ w, cross, atol=1e-15)
        np.testing.assert_array_equal(skew(v).T, -skew(v))
        np.testing.assert_allclose(unskew(skew(v)), v, atol=0)


def test_exp_identity_and_quarter_turn():
    np.testing.assert_array_equal(so3_exp(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(so3_exp([0, 0, np.pi / 2]) @ [1, 0, 0], [0, 1, 0], atol=1e-12)


@given(vec3)
def test_exp_composition(v):
    half = so3_exp(v / 2)
    np.testing.assert_allclose(so3_exp(v), half @ half, atol=1e-12)
    assert is_rotation(so3_exp(v))


@pytest.mark.parametrize("theta", [0.0, 1e-12, 1e-9, 1e-8 * 0.999, 1e-8, 1e-7])
def test_exp_small_angle_branch_is_continuous(theta):
    u = np.array([1.0, 2.0, 2.0]) / 3.0
    v = theta * u
    ref = np.eye(3) + skew(v) + 0.5 * skew(v) @ skew(v)
    np.testing.assert_allclose(so3_exp(v), ref, atol=1e-15)


def test_exp_batched_matches_single(rng):
    v = rng.standard_normal((7, 3))
    np.testing.assert_allclose(so3_exp(v), np.stack([so3_exp(x) for x in v]), atol=0)


@given(arrays(np.float64, 3, elements=st.floats(-1.0, 1.0)))
def test_log_inverts_exp(v):
    if np.linalg.norm(v) > np.pi - 1e-3:
        return
    np.testing.assert_allclose(so3_log(so3_exp(v)), v, atol=1e-10)


def test_log_near_pi():
    v = np.array([0.0, 0.0, np.pi - 1e-6])
    np.testing.assert_allclose(so3_exp(so3_log(so3_exp(v))), so3_exp(v), atol=1e-9)


def test_rotation_angle(rng):
    c = so3_exp(rng.standard_normal(3))
    for ang in (1e-9, 0.3, 2.0, np.pi - 1e-6):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        assert rotation_angle(c, c @ so3_exp(ang * axis)) == pytest.approx(ang, abs=1e-12)


def test_project_recovers_rotation(rng):
    c = so3_exp(rng.standard_normal(3))
    noisy = c + 1e-6 * rng.standard_normal((3, 3))
    p = project_to_so3(noisy)
    assert is_rotation(p)
    assert rotation_angle(p, c) < 1e-5
    batch = project_to_so3(np.stack([noisy, -noisy]))
    assert all(np.linalg.det(m) > 0 for m in batch)


@given(st.floats(-3.1, 3.1), st.floats(-3.1, 3.1), st.floats(-1.5, 1.5))
def test_euler_round_trip(roll, yaw, pitch):
    c = euler_to_dcm(roll, yaw, pitch)
    assert is_rotation(c)
    np.testing.assert_allclose(euler_to_dcm(*dcm_to_euler(c)), c, atol=1e-12)


def test_euler_sequence_order():
    # yaw about y, then pitch about z, then roll about x
    yaw, pitch, roll = 0.3, 0.2, 0.1
    ay = so3_exp([0, yaw, 0])
    az = so3_exp([0, 0, pitch])
    ax = so3_exp([roll, 0, 0])
    np.testing.assert_allclose(euler_to_dcm(roll, yaw, pitch), ay @ az @ ax, atol=1e-15)
    r, y, p = dcm_to_euler(ay @ az @ ax)
    np.testing.assert_allclose([r, y, p], [roll, yaw, pitch], atol=1e-14)
