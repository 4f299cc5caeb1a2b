import cv2
import numpy as np
import pytest

from videoreshape.camera import (Camera, RigidPose, canonicalize_axis_angle,
                                 geodesic_angle_deg, rotate_jacobian,
                                 rotate_jacobian_batch, rotation_matrix)


def test_rotation_matrix_matches_opencv():
    rng = np.random.default_rng(0)
    for _ in range(20):
        r = rng.normal(scale=0.8, size=3)
        R_cv, _ = cv2.Rodrigues(r)
        np.testing.assert_allclose(rotation_matrix(r), R_cv, atol=1e-12)


def test_rotation_matrix_small_angle():
    r = np.array([1e-12, -2e-12, 5e-13])
    np.testing.assert_allclose(rotation_matrix(r), np.eye(3), atol=1e-11)


def test_rotate_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        r = rng.normal(scale=0.7, size=3)
        v = rng.normal(size=3)
        J = rotate_jacobian(r, v)
        step = 1e-7
        for i in range(3):
            dp = r.copy(); dp[i] += step
            dm = r.copy(); dm[i] -= step
            fd = (rotation_matrix(dp) @ v - rotation_matrix(dm) @ v) / (2 * step)
            np.testing.assert_allclose(J[:, i], fd, atol=1e-6)


def test_rotate_jacobian_batch_consistent():
    rng = np.random.default_rng(2)
    r = rng.normal(scale=0.5, size=3)
    pts = rng.normal(size=(7, 3))
    batch = rotate_jacobian_batch(r, pts)
    for k in range(7):
        np.testing.assert_allclose(batch[k], rotate_jacobian(r, pts[k]), atol=1e-12)


def test_rotate_jacobian_at_zero():
    v = np.array([1.0, 2.0, 3.0])
    J = rotate_jacobian(np.zeros(3), v)
    expected = -np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    np.testing.assert_allclose(J, expected, atol=1e-12)


def test_canonicalize_wraps_large_angles():
    axis = np.array([0.0, 1.0, 0.0])
    r = axis * (np.pi + 0.3)
    rc = canonicalize_axis_angle(r)
    assert np.linalg.norm(rc) < np.pi
    np.testing.assert_allclose(rotation_matrix(rc), rotation_matrix(r), atol=1e-9)


def test_rigid_pose_invariant():
    with pytest.raises(ValueError):
        RigidPose(r=np.array([0.0, np.pi + 0.1, 0.0]), t=np.zeros(3))


def test_camera_invariants():
    with pytest.raises(ValueError):
        Camera(focal=-1.0, principal_point=np.array([1.0, 1.0]), image_size=(4, 4))
    with pytest.raises(ValueError):
        Camera(focal=10.0, principal_point=np.array([99.0, 1.0]), image_size=(4, 4))


def test_geodesic_angle():
    r = np.array([0.0, 0.0, np.radians(10.0)])
    assert abs(geodesic_angle_deg(r, np.zeros(3)) - 10.0) < 1e-9
