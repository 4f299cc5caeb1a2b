"""Pinhole camera, rigid pose, and axis-angle rotation machinery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProjectionError

_EPS_ANGLE = 1e-9


def canonicalize_axis_angle(r: np.ndarray) -> np.ndarray:
    """Wrap an axis-angle vector so that ||r|| < pi (same rotation)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta < np.pi:
        return r
    t = np.fmod(theta, 2.0 * np.pi)
    if t > np.pi:
        t -= 2.0 * np.pi
    if abs(t) >= np.pi - 1e-12:
        t = np.sign(t) * (np.pi - 1e-12)
    return r * (t / theta)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: focal length in pixels, principal point, image size (w, h)."""

    focal: float
    principal_point: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "principal_point",
                           np.asarray(self.principal_point, dtype=np.float64))
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        w, h = self.image_size
        px, py = self.principal_point
        if not (0 <= px < w and 0 <= py < h):
            raise ValueError("principal point outside image")


def default_camera(image_size: tuple[int, int], focal: float | None = None) -> Camera:
    """Default intrinsics: focal = 1.2 * max(w, h), principal point at center."""
    w, h = image_size
    if focal is None:
        focal = 1.2 * max(w, h)
    return Camera(focal=focal, principal_point=np.array([(w - 1) / 2.0, (h - 1) / 2.0]),
                  image_size=(int(w), int(h)))


@dataclass
class RigidPose:
    """Axis-angle rotation (radians) and translation (model units)."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64).reshape(3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if np.linalg.norm(self.r) >= np.pi:
            raise ValueError("axis-angle rotation must satisfy ||r|| < pi")

    def params(self) -> np.ndarray:
        return np.concatenate([self.r, self.t])

    @staticmethod
    def from_params(x: np.ndarray) -> "RigidPose":
        x = np.asarray(x, dtype=np.float64)
        return RigidPose(r=canonicalize_axis_angle(x[:3]), t=x[3:6].copy())

    def copy(self) -> "RigidPose":
        return RigidPose(self.r.copy(), self.t.copy())


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def rotation_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a Taylor fallback near the identity."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    K = skew(r)
    if theta < _EPS_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotate_jacobian(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(R(r) @ v)/dr as a 3x3 matrix (column i = derivative wrt r_i).

    Closed form of Gallego & Yezzi; at r = 0 the limit is -[v]x.
    """
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta2 = float(r @ r)
    if theta2 < _EPS_ANGLE ** 2:
        return -skew(v)
    R = rotation_matrix(r)
    Rv = R @ v
    K = skew(r)
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        dRi = (r[i] * K + skew(np.cross(r, (np.eye(3) - R) @ e))) @ R / theta2
        cols.append(dRi @ v)
    return np.stack(cols, axis=1)


def rotate_jacobian_batch(r: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """d(R(r) @ p)/dr for many points at once, shape (n, 3, 3)."""
    r = np.asarray(r, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    theta2 = float(r @ r)
    if theta2 < _EPS_ANGLE ** 2:
        out = np.zeros((len(pts), 3, 3))
        out[:, 0, 1] = pts[:, 2]
        out[:, 0, 2] = -pts[:, 1]
        out[:, 1, 0] = -pts[:, 2]
        out[:, 1, 2] = pts[:, 0]
        out[:, 2, 0] = pts[:, 1]
        out[:, 2, 1] = -pts[:, 0]
        return out
    R = rotation_matrix(r)
    K = skew(r)
    dR = np.empty((3, 3, 3))  # dR[i] = dR/dr_i
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        dR[i] = (r[i] * K + skew(np.cross(r, (np.eye(3) - R) @ e))) @ R / theta2
    # out[n, :, i] = dR[i] @ pts[n]
    return np.einsum("iab,nb->nai", dR, pts)


def transform_points(points: np.ndarray, pose: RigidPose) -> np.ndarray:
    """Model-frame points (n, 3) into the camera frame."""
    R = rotation_matrix(pose.r)
    return np.asarray(points, dtype=np.float64) @ R.T + pose.t


def project_points(points: np.ndarray, pose: RigidPose, cam: Camera) -> np.ndarray:
    """Pinhole projection of model-frame points; raises on nonpositive depth."""
    pc = transform_points(points, pose)
    z = pc[:, 2]
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise ProjectionError(f"vertex {int(bad[0])} has nonpositive depth {z[bad[0]]:.6g}")
    return cam.focal * pc[:, :2] / z[:, None] + cam.principal_point


def projection_jacobian_cam(points_cam: np.ndarray, cam: Camera) -> np.ndarray:
    """d(pixel)/d(camera-frame point), shape (n, 2, 3)."""
    x, y, z = points_cam[:, 0], points_cam[:, 1], points_cam[:, 2]
    n = len(points_cam)
    J = np.zeros((n, 2, 3))
    f = cam.focal
    J[:, 0, 0] = f / z
    J[:, 0, 2] = -f * x / (z * z)
    J[:, 1, 1] = f / z
    J[:, 1, 2] = -f * y / (z * z)
    return J


def geodesic_angle_deg(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Rotation angle in degrees between two axis-angle rotations."""
    Ra = rotation_matrix(np.asarray(r_a, dtype=np.float64))
    Rb = rotation_matrix(np.asarray(r_b, dtype=np.float64))
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
