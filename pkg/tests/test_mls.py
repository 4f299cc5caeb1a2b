import numpy as np
import pytest

from videoreshape.errors import WarpError
from videoreshape.mls import mls_deform


@pytest.fixture
def handles():
    rng = np.random.default_rng(0)
    return rng.uniform(10, 90, size=(25, 2))


@pytest.fixture
def points():
    rng = np.random.default_rng(1)
    return rng.uniform(0, 100, size=(60, 2))


def test_identity_exact(handles, points):
    out = mls_deform(handles, handles.copy(), points)
    np.testing.assert_array_equal(out, points)


def test_translation_reproduced(handles, points):
    shift = np.array([10.0, 0.0])
    out = mls_deform(handles, handles + shift, points)
    np.testing.assert_allclose(out, points + shift, atol=1e-6)


def test_uniform_scale_reproduced(handles, points):
    center = handles.mean(axis=0)
    dst = center + 1.1 * (handles - center)
    out = mls_deform(handles, dst, points)
    np.testing.assert_allclose(out, center + 1.1 * (points - center), atol=1e-6)


def test_rotation_reproduced(handles, points):
    th = np.radians(23.0)
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    center = np.array([50.0, 50.0])
    dst = (handles - center) @ R.T + center
    out = mls_deform(handles, dst, points)
    np.testing.assert_allclose(out, (points - center) @ R.T + center, atol=1e-6)


def test_general_similarity_reproduced(handles, points):
    th = np.radians(-37.0)
    s = 0.8
    R = s * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    t = np.array([5.0, -3.0])
    dst = handles @ R.T + t
    out = mls_deform(handles, dst, points)
    np.testing.assert_allclose(out, points @ R.T + t, atol=1e-6)


def test_affine_variant_reproduces_affine(handles, points):
    A = np.array([[1.2, 0.3], [-0.1, 0.9]])
    t = np.array([4.0, 7.0])
    dst = handles @ A.T + t
    out = mls_deform(handles, dst, points, variant="affine")
    np.testing.assert_allclose(out, points @ A.T + t, atol=1e-5)


def test_similarity_does_not_reproduce_shear(handles, points):
    A = np.array([[1.0, 0.6], [0.0, 1.0]])
    dst = handles @ A.T
    out = mls_deform(handles, dst, points)
    assert np.abs(out - points @ A.T).max() > 0.1


def test_too_few_handles(points):
    with pytest.raises(WarpError):
        mls_deform(np.zeros((2, 2)), np.zeros((2, 2)), points)


def test_unknown_variant(handles, points):
    with pytest.raises(ValueError):
        mls_deform(handles, handles + 1.0, points, variant="projective")
