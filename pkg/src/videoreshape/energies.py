"""Fitting energies: landmark, contour, prior, temporal, and dense-flow terms.

Every residual helper comes with an analytic Jacobian (verified against finite
differences in the test suite). Energies are squared norms of the residual
vectors; phase weights multiply the energies, so residual rows are scaled by
sqrt(weight) when stacked into a solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import (Camera, RigidPose, projection_jacobian_cam, rotate_jacobian_batch,
                     rotation_matrix, transform_points)
from .errors import DimensionError, GeometryError, SamplingError
from .model import FaceModel

PRIOR_NORM_GUARD = 1e-12

FLOW_SAMPLE_RADIUS = 3.0
FLOW_SAMPLE_SIGMA = 1.5
FLOW_FILTER_WINDOW = 9
FLOW_FILTER_MAD_FACTOR = 2.0
FLOW_FILTER_FLOOR = 1e-9


@dataclass(frozen=True)
class PoseWeights:
    land: float = 0.6
    temp: float = 0.9
    optic: float = 0.5


@dataclass(frozen=True)
class PhaseWeights:
    align: float
    optic: float
    temp: float


@dataclass
class EnergyWeights:
    """Default weights of the fitting objective (all empirical constants)."""

    sigma_align: float = 0.5
    w_prior: float = 0.4
    gamma: float | None = None  # 1 / face_length, resolved against the model
    sigma_temp: float = 2.0
    pose: PoseWeights = field(default_factory=PoseWeights)
    identity: PhaseWeights = field(default_factory=lambda: PhaseWeights(align=0.7, optic=0.1, temp=0.2))
    expression: PhaseWeights = field(default_factory=lambda: PhaseWeights(align=0.9, optic=0.5, temp=0.5))

    def __post_init__(self):
        for name in ("sigma_align", "w_prior", "sigma_temp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def resolve_gamma(self, face_length: float) -> float:
        return self.gamma if self.gamma is not None else 1.0 / face_length


@dataclass
class PreviousFrame:
    """Fixed state of the previous frame used by temporal and flow terms."""

    pose: RigidPose
    beta: np.ndarray


# ---------------------------------------------------------------------------
# Projection system: points + Jacobians wrt pose / alpha / beta in one pass.
# ---------------------------------------------------------------------------

def _basis_slices(model: FaceModel, vert_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Identity/expression basis restricted to a vertex subset, (m, k, 3)."""
    bs = model.identity_basis.reshape(model.m_s, -1, 3)[:, vert_idx, :]
    be = model.expression_basis.reshape(model.m_e, -1, 3)[:, vert_idx, :]
    return bs, be


def _anchor_positions(vertices: np.ndarray, tris: np.ndarray, tri_idx: np.ndarray,
                      barys: np.ndarray) -> np.ndarray:
    """Barycentric surface points, (k, 3)."""
    corner = vertices[tris[tri_idx]]          # (k, 3, 3)
    return np.einsum("kc,kcd->kd", barys, corner)


def _anchor_basis(model: FaceModel, tri_idx: np.ndarray, barys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tris = model.triangles[tri_idx]           # (k, 3)
    bs = model.identity_basis.reshape(model.m_s, -1, 3)[:, tris, :]  # (m, k, 3, 3)
    be = model.expression_basis.reshape(model.m_e, -1, 3)[:, tris, :]
    bs = np.einsum("kc,mkcd->mkd", barys, bs)
    be = np.einsum("kc,mkcd->mkd", barys, be)
    return bs, be


class ProjectionSystem:
    """Projects a set of surface points and differentiates the pixel positions
    with respect to pose (r, t), identity, and expression coefficients.

    Points are either mesh vertices (`vert_idx`) or barycentric anchors
    (`tri_idx` + `barys`).
    """

    def __init__(self, model: FaceModel, cam: Camera, vert_idx: np.ndarray | None = None,
                 tri_idx: np.ndarray | None = None, barys: np.ndarray | None = None):
        self.model = model
        self.cam = cam
        if (vert_idx is None) == (tri_idx is None):
            raise ValueError("specify exactly one of vert_idx or (tri_idx, barys)")
        if vert_idx is not None:
            self.vert_idx = np.asarray(vert_idx, dtype=np.int64)
            self.bs, self.be = _basis_slices(model, self.vert_idx)
            self.tri_idx = None
        else:
            self.tri_idx = np.asarray(tri_idx, dtype=np.int64)
            self.barys = np.asarray(barys, dtype=np.float64)
            self.bs, self.be = _anchor_basis(model, self.tri_idx, self.barys)
            self.vert_idx = None

    def model_points(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        flat = (self.model.mean_shape + np.asarray(alpha) @ self.model.identity_basis
                + np.asarray(beta) @ self.model.expression_basis)
        verts = flat.reshape(-1, 3)
        if self.vert_idx is not None:
            return verts[self.vert_idx]
        return _anchor_positions(verts, self.model.triangles, self.tri_idx, self.barys)

    def project(self, alpha: np.ndarray, beta: np.ndarray, pose: RigidPose) -> np.ndarray:
        pts = self.model_points(alpha, beta)
        pc = transform_points(pts, pose)
        z = pc[:, 2]
        bad = np.nonzero(z <= 0)[0]
        if bad.size:
            from .errors import ProjectionError
            raise ProjectionError(f"point {int(bad[0])} has nonpositive depth")
        return self.cam.focal * pc[:, :2] / z[:, None] + self.cam.principal_point

    def project_with_jacobians(self, alpha: np.ndarray, beta: np.ndarray, pose: RigidPose,
                               wrt: tuple[str, ...] = ("pose",)) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Returns pixels (k, 2) and Jacobians keyed by 'pose' (k, 2, 6),
        'alpha' (k, 2, m_s), 'beta' (k, 2, m_e)."""
        pts = self.model_points(alpha, beta)
        pc = transform_points(pts, pose)
        proj = self.cam.focal * pc[:, :2] / pc[:, 2:3] + self.cam.principal_point
        Jcam = projection_jacobian_cam(pc, self.cam)  # (k, 2, 3)
        jac: dict[str, np.ndarray] = {}
        if "pose" in wrt:
            Jr = np.einsum("kab,kbc->kac", Jcam, rotate_jacobian_batch(pose.r, pts))
            jac["pose"] = np.concatenate([Jr, Jcam], axis=2)  # d/dt = Jcam
        R = rotation_matrix(pose.r)
        if "alpha" in wrt:
            dcam = np.einsum("mkd,ed->mke", self.bs, R)  # (m, k, 3) rotated
            jac["alpha"] = np.einsum("kab,mkb->kam", Jcam, dcam)
        if "beta" in wrt:
            dcam = np.einsum("mkd,ed->mke", self.be, R)
            jac["beta"] = np.einsum("kab,mkb->kam", Jcam, dcam)
        return proj, jac


# ---------------------------------------------------------------------------
# Landmark energy
# ---------------------------------------------------------------------------

def landmark_residuals(model: FaceModel, alpha: np.ndarray, beta: np.ndarray,
                       pose: RigidPose, cam: Camera, landmarks: np.ndarray) -> np.ndarray:
    """Projected landmark vertices minus observed 2D landmarks, flattened."""
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.shape != (model.n_landmarks, 2):
        raise DimensionError(f"expected {model.n_landmarks} landmarks")
    sys = ProjectionSystem(model, cam, vert_idx=model.landmark_vertices)
    return (sys.project(alpha, beta, pose) - landmarks).reshape(-1)


def landmark_energy(model, alpha, beta, pose, cam, landmarks) -> float:
    r = landmark_residuals(model, alpha, beta, pose, cam, landmarks)
    return float(r @ r)


# ---------------------------------------------------------------------------
# Contour energy
# ---------------------------------------------------------------------------

def contour_correspondences(silhouette_points: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    """Nearest silhouette sample index for each contour landmark (fixed per solve)."""
    if len(silhouette_points) == 0:
        raise GeometryError("empty silhouette")
    d2 = ((landmarks[:, None, :] - silhouette_points[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def contour_residuals(model: FaceModel, alpha: np.ndarray, beta: np.ndarray,
                      pose: RigidPose, cam: Camera, contour_landmarks: np.ndarray,
                      silhouette) -> np.ndarray:
    """Residuals between projected silhouette anchors and contour landmarks.

    `silhouette` provides points/anchor_tris/anchor_barys (see contour module);
    each landmark is matched to its nearest silhouette sample.
    """
    contour_landmarks = np.asarray(contour_landmarks, dtype=np.float64)
    corr = contour_correspondences(silhouette.points, contour_landmarks)
    sys = ProjectionSystem(model, cam, tri_idx=silhouette.anchor_tris[corr],
                           barys=silhouette.anchor_barys[corr])
    return (sys.project(alpha, beta, pose) - contour_landmarks).reshape(-1)


# ---------------------------------------------------------------------------
# Prior energy (unsquared L2 norms)
# ---------------------------------------------------------------------------

def prior_energy(alpha: np.ndarray, beta: np.ndarray, w_prior: float = 0.4) -> float:
    """w_prior * (||alpha||_2 + ||beta||_2)."""
    return float(w_prior * (np.linalg.norm(alpha) + np.linalg.norm(beta)))


def prior_residuals_jacobian(coeffs: np.ndarray, w_prior: float) -> tuple[np.ndarray, np.ndarray]:
    """One residual r = sqrt(w * ||c||_eps) so that r^2 recovers the energy term.

    The guard eps keeps the norm differentiable at the origin.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    norm_eps = np.sqrt(c @ c + PRIOR_NORM_GUARD)
    r = np.sqrt(w_prior * norm_eps)
    # dr/dc_j = sqrt(w) * c_j / (2 * norm_eps^(3/2))
    jac = np.sqrt(w_prior) * c / (2.0 * norm_eps ** 1.5)
    return np.array([r]), jac[None, :]


# ---------------------------------------------------------------------------
# Temporal coherence energy
# ---------------------------------------------------------------------------

def temporal_residuals(pose: RigidPose, prev_pose: RigidPose | None,
                       beta: np.ndarray, prev_beta: np.ndarray | None,
                       weights: EnergyWeights, face_length: float) -> np.ndarray:
    """[r - r', sqrt(gamma)(t - t'), sqrt(sigma_temp)(beta - beta')]; empty when
    there is no previous frame."""
    if prev_pose is None:
        return np.zeros(0)
    gamma = weights.resolve_gamma(face_length)
    parts = [pose.r - prev_pose.r, np.sqrt(gamma) * (pose.t - prev_pose.t)]
    if prev_beta is not None:
        parts.append(np.sqrt(weights.sigma_temp) * (np.asarray(beta) - np.asarray(prev_beta)))
    return np.concatenate(parts)


def temporal_energy(pose, prev_pose, beta, prev_beta, weights, face_length) -> float:
    r = temporal_residuals(pose, prev_pose, beta, prev_beta, weights, face_length)
    return float(r @ r)


# ---------------------------------------------------------------------------
# Dense flow energy
# ---------------------------------------------------------------------------

def sample_flow(flow: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Gaussian-weighted flow average over a radius-3 px window (sigma 1.5 px).

    Taps are the integer pixels within the radius; out-of-bounds taps are
    dropped and the kernel renormalized.
    """
    flow = np.asarray(flow)
    h, w = flow.shape[:2]
    px, py = float(p[0]), float(p[1])
    if not (0.0 <= px <= w - 1 and 0.0 <= py <= h - 1):
        raise SamplingError(f"flow sample ({px:.2f}, {py:.2f}) outside {w}x{h} image")
    r = FLOW_SAMPLE_RADIUS
    x0, x1 = int(np.ceil(px - r)), int(np.floor(px + r))
    y0, y1 = int(np.ceil(py - r)), int(np.floor(py + r))
    xs = np.arange(max(x0, 0), min(x1, w - 1) + 1)
    ys = np.arange(max(y0, 0), min(y1, h - 1) + 1)
    gx, gy = np.meshgrid(xs, ys)
    d2 = (gx - px) ** 2 + (gy - py) ** 2
    mask = d2 <= r * r + 1e-12
    wgt = np.exp(-d2[mask] / (2.0 * FLOW_SAMPLE_SIGMA ** 2))
    taps = flow[gy[mask], gx[mask]].astype(np.float64)
    return (wgt[:, None] * taps).sum(axis=0) / wgt.sum()


def _sliding_median(values: np.ndarray, window: int) -> np.ndarray:
    """Centered median with symmetric truncation at the ends (window stays
    centered so smooth ramps are reproduced exactly)."""
    n = len(values)
    half_max = window // 2
    out = np.empty_like(values)
    for i in range(n):
        half = min(i, n - 1 - i, half_max)
        out[i] = np.median(values[i - half:i + half + 1], axis=0)
    return out


def filter_flow_outliers(samples: list[tuple[int, np.ndarray]]) -> list[tuple[int, np.ndarray]]:
    """Median filter along contour order + MAD rejection of deviant motions."""
    if len(samples) < 3:
        return list(samples)
    motions = np.asarray([m for _, m in samples], dtype=np.float64)
    smoothed = _sliding_median(motions, FLOW_FILTER_WINDOW)
    dev = np.linalg.norm(motions - smoothed, axis=1)
    mad = float(np.median(dev))
    threshold = max(FLOW_FILTER_MAD_FACTOR * mad, FLOW_FILTER_FLOOR)
    return [s for s, d in zip(samples, dev) if d <= threshold]


def flow_residuals(model: FaceModel, alpha: np.ndarray, beta: np.ndarray,
                   pose: RigidPose, prev_state: PreviousFrame, cam: Camera,
                   flow: np.ndarray, apply_filter: bool = True) -> np.ndarray:
    """Dense-flow residuals on the contour landmark vertices.

    For each contour vertex i: proj_cur(i) - proj_prev(i) - U_i, with U_i
    sampled from the flow field at the previous-frame projection. Vertices
    rejected by the outlier filter (or falling outside the flow field)
    contribute nothing.
    """
    verts = model.contour_landmark_vertices
    sys = ProjectionSystem(model, cam, vert_idx=verts)
    proj_prev = sys.project(alpha, prev_state.beta, prev_state.pose)
    samples = []
    for j, p in enumerate(proj_prev):
        try:
            samples.append((j, sample_flow(flow, p)))
        except SamplingError:
            continue
    if apply_filter:
        samples = filter_flow_outliers(samples)
    if not samples:
        return np.zeros(0)
    keep = np.array([j for j, _ in samples])
    motion = np.asarray([m for _, m in samples])
    proj_cur = sys.project(alpha, beta, pose)
    return (proj_cur[keep] - proj_prev[keep] - motion).reshape(-1)
