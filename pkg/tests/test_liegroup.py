import numpy as np
import pytest

from flapsim.liegroup import (
    E1, E2, E3, MIRROR_Y, angular_velocity, euler_132_left, euler_132_right,
    expm_so3, hat, is_rotation, rot_x, rot_y, rot_z, vee,
)


def test_hat_cross_product_identity():
    assert np.allclose(hat(E1) @ E2, E3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        v, w = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(hat(v) @ w, np.cross(v, w))


def test_hat_zero():
    assert np.array_equal(hat(np.zeros(3)), np.zeros((3, 3)))


def test_vee_hat_roundtrip():
    v = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(vee(hat(v)), v)
    S = hat(np.array([-0.4, 0.1, 2.2]))
    assert np.array_equal(hat(vee(S)), S)


def test_expm_identity_at_zero():
    assert np.allclose(expm_so3(np.zeros(3)), np.eye(3))


def test_expm_quarter_turn():
    R = expm_so3((np.pi / 2) * E3)
    assert np.allclose(R @ E1, E2, atol=1e-14)


def test_expm_inverse():
    v = np.array([0.3, -0.2, 0.1])
    assert np.allclose(expm_so3(v) @ expm_so3(-v), np.eye(3), atol=1e-14)


def test_expm_outputs_are_rotations():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = rng.normal(size=3)
        v *= rng.uniform(0, 10) / max(np.linalg.norm(v), 1e-30)
        assert is_rotation(expm_so3(v), tol=1e-12)


def test_expm_small_angle_branch_continuity():
    v = np.array([3e-9, -4e-9, 1e-9])
    assert np.allclose(expm_so3(v), np.eye(3) + hat(v), atol=1e-16)
    assert is_rotation(expm_so3(v), tol=1e-12)


def test_expm_axis_composition():
    e = np.array([1.0, 2.0, -1.0])
    e /= np.linalg.norm(e)
    a, b = 0.7, -1.9
    lhs = expm_so3(a * e) @ expm_so3(b * e)
    assert np.allclose(lhs, expm_so3((a + b) * e), atol=1e-12)


def test_single_axis_rotations_match_expm():
    assert np.allclose(rot_x(0.3), expm_so3(0.3 * E1))
    assert np.allclose(rot_y(-1.2), expm_so3(-1.2 * E2))
    assert np.allclose(rot_z(2.0), expm_so3(2.0 * E3))


def test_euler_132_identity_and_single_factor():
    assert np.allclose(euler_132_right(0, 0, 0, 0), np.eye(3))
    assert np.allclose(euler_132_right(0.5, 0, 0, 0), expm_so3(0.5 * E2))


def test_euler_132_right_matches_explicit_product():
    b, ph, ps, th = 0.1, 0.2, 0.3, 0.4
    expected = (expm_so3(b * E2) @ expm_so3(ph * E1)
                @ expm_so3(-ps * E3) @ expm_so3(th * E2))
    assert np.allclose(euler_132_right(b, ph, ps, th), expected, atol=1e-14)


def test_euler_132_left_is_mirror_of_right():
    b, ph, ps, th = 0.15, -0.4, 0.22, 0.9
    QR = euler_132_right(b, ph, ps, th)
    QL = euler_132_left(b, ph, ps, th)
    assert np.allclose(QL, MIRROR_Y @ QR @ MIRROR_Y, atol=1e-14)


def test_angular_velocity_identity_attitude():
    w = np.array([1.0, 0.0, 0.0])
    assert np.allclose(angular_velocity(np.eye(3), hat(w)), w)
    assert np.allclose(angular_velocity(rot_y(0.7), np.zeros((3, 3))), 0.0)


def test_angular_velocity_finite_difference_oracle():
    # Q(t) = exp(t v) has constant body rate v; the oracle is a central
    # finite difference of Q.
    v = np.array([0.1, 0.2, 0.3])
    h = 1e-6
    for t in (0.0, 0.4, 2.1):
        Qdot = (expm_so3((t + h) * v) - expm_so3((t - h) * v)) / (2 * h)
        w = angular_velocity(expm_so3(t * v), Qdot)
        assert np.allclose(w, v, atol=1e-8)


def test_angular_velocity_random_composed_rate():
    rng = np.random.default_rng(2)
    for _ in range(10):
        Q = expm_so3(rng.normal(size=3))
        w = rng.normal(size=3)
        Qdot = Q @ hat(w)
        assert np.allclose(angular_velocity(Q, Qdot), w, atol=1e-12)


def test_angular_velocity_rejects_inconsistent_inputs():
    with pytest.raises(ValueError):
        angular_velocity(np.eye(3), np.eye(3))
