"""Error metrics for synthetic evaluations."""
from __future__ import annotations

import numpy as np

from .camera import RigidPose, geodesic_angle_deg
from .model import FaceMesh


def pose_error(est: RigidPose, truth: RigidPose, face_length: float) -> tuple[float, float]:
    """(rotation error in degrees, translation error as a fraction of the
    face length)."""
    deg = geodesic_angle_deg(est.r, truth.r)
    frac = float(np.linalg.norm(est.t - truth.t) / face_length)
    return deg, frac


def mesh_rmse(est: FaceMesh, truth: FaceMesh) -> float:
    """Vertex RMSE as a fraction of the truth mesh's bounding-box diagonal."""
    d = np.linalg.norm(est.vertices - truth.vertices, axis=1)
    rmse = float(np.sqrt((d ** 2).mean()))
    bbox = truth.vertices.max(axis=0) - truth.vertices.min(axis=0)
    return rmse / float(np.linalg.norm(bbox))


def second_difference_norm(poses: list[RigidPose], face_length: float) -> float:
    """Smoothness of a pose trajectory: squared norm of second differences of
    (r, t / face_length)."""
    x = np.array([np.concatenate([p.r, p.t / face_length]) for p in poses])
    if len(x) < 3:
        return 0.0
    dd = x[2:] - 2 * x[1:-1] + x[:-2]
    return float((dd ** 2).sum())
