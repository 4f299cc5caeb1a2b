"""Three-phase video face fitting: per-frame rigid pose, one shared identity
estimated over a representative frame window, then per-frame expressions.

Poses are solved first so later phases can use the projected face boundary
(contour energy) and the dense-flow term on stable contours.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, RigidPose, rotation_matrix
from .energies import (EnergyWeights, PreviousFrame, ProjectionSystem,
                       contour_correspondences, filter_flow_outliers,
                       prior_residuals_jacobian, sample_flow)
from .errors import SamplingError, TrackingError
from .model import FaceModel, assemble
from .silhouette import extract_silhouette
from .solver import SolveInfo, SolverDivergence, solve_least_squares

log = logging.getLogger(__name__)

CONTOUR_SUPERSAMPLE = 2  # finer raster for contour anchoring in the fits


@dataclass
class FrameObservation:
    index: int
    landmarks: np.ndarray          # (NL, 2)
    flow: np.ndarray | None = None  # (h, w, 2), previous frame -> this frame

    def contour_landmarks(self, model: FaceModel) -> np.ndarray:
        return self.landmarks[model.contour_flags]


@dataclass
class TrackOptions:
    k_max: int = 10
    repose_after_identity: bool = False
    flow_filter: bool = True
    max_repose_rounds: int = 5
    repose_tol: float = 1e-3


@dataclass
class TrackResult:
    poses: list[RigidPose]
    alpha: np.ndarray
    betas: np.ndarray              # (n_frames, m_e)
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Pose estimation
# ---------------------------------------------------------------------------

def _cold_pose_init(model: FaceModel, landmarks: np.ndarray, cam: Camera,
                    alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Frontal-assumption init: depth from the 2D/3D landmark spread ratio."""
    mesh = assemble(model, alpha, beta)
    X = mesh.vertices[model.landmark_vertices]
    cx = X[:, :2].mean(axis=0)
    spread3 = np.sqrt(((X[:, :2] - cx) ** 2).sum(axis=1).mean())
    lc = landmarks.mean(axis=0)
    spread2 = np.sqrt(((landmarks - lc) ** 2).sum(axis=1).mean())
    z_cam = cam.focal * spread3 / max(spread2, 1e-9)
    mz = X[:, 2].mean()
    t = np.array([(lc[0] - cam.principal_point[0]) * z_cam / cam.focal - cx[0],
                  (lc[1] - cam.principal_point[1]) * z_cam / cam.focal - cx[1],
                  z_cam - mz])
    return np.concatenate([np.zeros(3), t])


def _prepare_flow_samples(model: FaceModel, alpha: np.ndarray, prev: PreviousFrame,
                          cam: Camera, flow: np.ndarray, apply_filter: bool
                          ) -> tuple[np.ndarray, np.ndarray] | None:
    """Sample the flow at the previous-frame contour projections; returns
    (kept vertex positions in contour order, motion vectors) or None."""
    verts = model.contour_landmark_vertices
    sys_prev = ProjectionSystem(model, cam, vert_idx=verts)
    proj_prev = sys_prev.project(alpha, prev.beta, prev.pose)
    samples = []
    for j, p in enumerate(proj_prev):
        try:
            samples.append((j, sample_flow(flow, p)))
        except SamplingError:
            continue
    if apply_filter:
        samples = filter_flow_outliers(samples)
    if not samples:
        return None
    keep = np.array([j for j, _ in samples], dtype=np.int64)
    motion = np.asarray([m for _, m in samples])
    return keep, motion


def estimate_pose(model: FaceModel, obs: FrameObservation, prev: PreviousFrame | None,
                  cam: Camera, weights: EnergyWeights,
                  alpha: np.ndarray | None = None, beta: np.ndarray | None = None,
                  flow_filter: bool = True, init: RigidPose | None = None,
                  ) -> tuple[RigidPose, SolveInfo]:
    """Minimize lambda_land*E_land + lambda_temp*E_temp_pose + lambda_optic*E_optic
    over (r, t) with identity and expression fixed."""
    alpha = np.zeros(model.m_s) if alpha is None else np.asarray(alpha, dtype=np.float64)
    beta = np.zeros(model.m_e) if beta is None else np.asarray(beta, dtype=np.float64)
    pw = weights.pose
    gamma = weights.resolve_gamma(model.face_length)

    lm_sys = ProjectionSystem(model, cam, vert_idx=model.landmark_vertices)
    target = np.asarray(obs.landmarks, dtype=np.float64)

    use_temporal = prev is not None and pw.temp > 0
    flow_data = None
    if prev is not None and obs.flow is not None and pw.optic > 0:
        flow_data = _prepare_flow_samples(model, alpha, prev, cam, obs.flow, flow_filter)
    if flow_data is not None:
        keep, motion = flow_data
        verts = model.contour_landmark_vertices[keep]
        flow_sys = ProjectionSystem(model, cam, vert_idx=verts)
        proj_prev = flow_sys.project(alpha, prev.beta, prev.pose)

    sl = np.sqrt(pw.land)
    st = np.sqrt(pw.temp)
    so = np.sqrt(pw.optic)

    def residual_jacobian(x):
        pose = RigidPose(r=x[:3], t=x[3:6])
        rows = []
        jacs = []
        proj, jac = lm_sys.project_with_jacobians(alpha, beta, pose, wrt=("pose",))
        rows.append(sl * (proj - target).reshape(-1))
        jacs.append(sl * jac["pose"].reshape(-1, 6))
        if use_temporal:
            rows.append(st * np.concatenate([pose.r - prev.pose.r,
                                             np.sqrt(gamma) * (pose.t - prev.pose.t)]))
            Jt = np.zeros((6, 6))
            Jt[:3, :3] = np.eye(3)
            Jt[3:, 3:] = np.sqrt(gamma) * np.eye(3)
            jacs.append(st * Jt)
        if flow_data is not None:
            projc, jacc = flow_sys.project_with_jacobians(alpha, beta, pose, wrt=("pose",))
            rows.append(so * (projc - proj_prev - motion).reshape(-1))
            jacs.append(so * jacc["pose"].reshape(-1, 6))
        return np.concatenate(rows), np.vstack(jacs)

    if init is not None:
        x0 = init.params()
    elif prev is not None and (pw.temp > 0 or flow_data is not None):
        x0 = prev.pose.params()
    else:
        # without temporal/flow coupling frames are independent; a cold init
        # keeps the result independent of the frame order
        x0 = _cold_pose_init(model, target, cam, alpha, beta)
    try:
        x, info = solve_least_squares(residual_jacobian, x0)
    except SolverDivergence as exc:
        raise TrackingError(f"pose solve diverged on frame {obs.index}: {exc}") from exc
    return RigidPose.from_params(x), info


# ---------------------------------------------------------------------------
# Representative-frame selection
# ---------------------------------------------------------------------------

def frontality_angle(pose: RigidPose) -> float:
    """Tilt of the face's view axis away from straight-on, in radians."""
    Rz = rotation_matrix(pose.r)[:, 2]
    return float(np.arccos(np.clip(Rz[2], -1.0, 1.0)))


def select_representative_frames(poses: list[RigidPose], k: int) -> range:
    """Most-frontal consecutive window of k frames (earliest wins ties)."""
    n = len(poses)
    if n == 0:
        raise ValueError("empty pose sequence")
    if not 1 <= k <= min(10, n):
        raise ValueError(f"k must be in [1, min(10, {n})], got {k}")
    scores = np.array([frontality_angle(p) for p in poses])
    sums = np.convolve(scores, np.ones(k), mode="valid")
    start = int(np.argmin(sums))
    return range(start, start + k)


# ---------------------------------------------------------------------------
# Identity bundle over the representative window
# ---------------------------------------------------------------------------

def estimate_identity(model: FaceModel, frames: list[tuple[FrameObservation, RigidPose]],
                      cam: Camera, weights: EnergyWeights, flow_filter: bool = True,
                      alpha_init: np.ndarray | None = None,
                      betas_init: np.ndarray | None = None,
                      ) -> tuple[np.ndarray, np.ndarray, SolveInfo]:
    """Bundle solve over the frame window: one shared identity vector, free
    per-frame expressions, poses frozen. Returns (alpha, window betas, info).

    Silhouettes, contour correspondences, and flow sample positions are fixed
    at the initial state of this invocation.
    """
    iw = weights.identity
    k = len(frames)
    m_s, m_e = model.m_s, model.m_e
    n_params = m_s + k * m_e

    def beta_slice(i: int) -> slice:
        return slice(m_s + i * m_e, m_s + (i + 1) * m_e)

    init_a = np.zeros(m_s) if alpha_init is None else np.asarray(alpha_init, dtype=np.float64)
    init_b = np.zeros((k, m_e)) if betas_init is None else np.asarray(betas_init, dtype=np.float64)

    lm_sys = ProjectionSystem(model, cam, vert_idx=model.landmark_vertices)
    per_frame = []
    for i, (obs, pose) in enumerate(frames):
        mesh = assemble(model, init_a, init_b[i])
        sil = extract_silhouette(mesh, pose, cam, supersample=CONTOUR_SUPERSAMPLE)
        contour_lm = obs.contour_landmarks(model)
        corr = contour_correspondences(sil.points, contour_lm)
        contour_sys = ProjectionSystem(model, cam, tri_idx=sil.anchor_tris[corr],
                                       barys=sil.anchor_barys[corr])
        flow_block = None
        if i > 0 and obs.flow is not None and iw.optic > 0:
            prev_obs, prev_pose = frames[i - 1]
            prev = PreviousFrame(pose=prev_pose, beta=init_b[i - 1])
            flow_data = _prepare_flow_samples(model, init_a, prev, cam, obs.flow,
                                              flow_filter)
            if flow_data is not None:
                keep, motion = flow_data
                verts = model.contour_landmark_vertices[keep]
                flow_block = (ProjectionSystem(model, cam, vert_idx=verts), motion)
        per_frame.append((obs, pose, contour_sys, contour_lm, flow_block))

    s_lm = np.sqrt(iw.align)
    s_ct = np.sqrt(iw.align * weights.sigma_align)
    s_fl = np.sqrt(iw.optic)
    s_tp = np.sqrt(iw.temp * weights.sigma_temp)

    def residual_jacobian(x, ridge_prior=False):
        alpha = x[:m_s]
        rows = []
        jacs = []

        def add(res, jac_alpha, jac_betas):
            m = len(res)
            J = np.zeros((m, n_params))
            if jac_alpha is not None:
                J[:, :m_s] = jac_alpha
            for fi, jb in jac_betas:
                J[:, beta_slice(fi)] = jb
            rows.append(res)
            jacs.append(J)

        for i, (obs, pose, contour_sys, contour_lm, flow_block) in enumerate(per_frame):
            beta = x[beta_slice(i)]
            proj, jac = lm_sys.project_with_jacobians(alpha, beta, pose,
                                                      wrt=("alpha", "beta"))
            add(s_lm * (proj - obs.landmarks).reshape(-1),
                s_lm * jac["alpha"].reshape(-1, m_s),
                [(i, s_lm * jac["beta"].reshape(-1, m_e))])
            cproj, cjac = contour_sys.project_with_jacobians(alpha, beta, pose,
                                                             wrt=("alpha", "beta"))
            add(s_ct * (cproj - contour_lm).reshape(-1),
                s_ct * cjac["alpha"].reshape(-1, m_s),
                [(i, s_ct * cjac["beta"].reshape(-1, m_e))])
            if flow_block is not None:
                beta_prev = x[beta_slice(i - 1)]
                pose_prev = per_frame[i - 1][1]
                fsys, motion = flow_block
                pc, jc = fsys.project_with_jacobians(alpha, beta, pose,
                                                     wrt=("alpha", "beta"))
                pp, jp = fsys.project_with_jacobians(alpha, beta_prev, pose_prev,
                                                     wrt=("alpha", "beta"))
                add(s_fl * (pc - pp - motion).reshape(-1),
                    s_fl * (jc["alpha"] - jp["alpha"]).reshape(-1, m_s),
                    [(i, s_fl * jc["beta"].reshape(-1, m_e)),
                     (i - 1, -s_fl * jp["beta"].reshape(-1, m_e))])
            if i > 0:
                beta_prev = x[beta_slice(i - 1)]
                add(s_tp * (beta - beta_prev), None,
                    [(i, s_tp * np.eye(m_e)), (i - 1, -s_tp * np.eye(m_e))])
            # per-frame prior on the shared alpha and this frame's beta
            if ridge_prior:
                # warm-up surrogate: quadratic shrinkage with linear residual
                # rows, which Gauss-Newton models exactly
                sq = np.sqrt(weights.w_prior / 2.0)
                add(sq * alpha, sq * np.eye(m_s), [])
                add(sq * beta, None, [(i, sq * np.eye(m_e))])
            else:
                ra, ja = prior_residuals_jacobian(alpha, weights.w_prior)
                add(ra, ja, [])
                rb, jb = prior_residuals_jacobian(beta, weights.w_prior)
                add(rb, None, [(i, jb)])
        return np.concatenate(rows), np.vstack(jacs)

    x0 = np.concatenate([init_a, init_b.reshape(-1)])
    try:
        # the norm prior's sqrt residual gives Gauss-Newton a poor quadratic
        # model far from the optimum; a ridge-regularized pass supplies the
        # warm start, then the exact objective is minimized from there
        x0, _ = solve_least_squares(lambda x: residual_jacobian(x, ridge_prior=True), x0)
        x, info = solve_least_squares(residual_jacobian, x0)
    except SolverDivergence as exc:
        raise TrackingError(f"identity bundle diverged: {exc}") from exc
    betas = x[m_s:].reshape(k, m_e)
    return x[:m_s], betas, info


# ---------------------------------------------------------------------------
# Expression estimation
# ---------------------------------------------------------------------------

def estimate_expression(model: FaceModel, alpha: np.ndarray, obs: FrameObservation,
                        pose: RigidPose, prev: PreviousFrame | None, cam: Camera,
                        weights: EnergyWeights, flow_filter: bool = True,
                        beta_init: np.ndarray | None = None,
                        ) -> tuple[np.ndarray, SolveInfo]:
    """Per-frame expression solve with identity and pose fixed."""
    ew = weights.expression
    m_e = model.m_e
    beta0 = np.zeros(m_e) if beta_init is None else np.asarray(beta_init, dtype=np.float64)

    lm_sys = ProjectionSystem(model, cam, vert_idx=model.landmark_vertices)
    mesh = assemble(model, alpha, beta0)
    sil = extract_silhouette(mesh, pose, cam, supersample=CONTOUR_SUPERSAMPLE)
    contour_lm = obs.contour_landmarks(model)
    corr = contour_correspondences(sil.points, contour_lm)
    contour_sys = ProjectionSystem(model, cam, tri_idx=sil.anchor_tris[corr],
                                   barys=sil.anchor_barys[corr])

    flow_block = None
    if prev is not None and obs.flow is not None and ew.optic > 0:
        flow_data = _prepare_flow_samples(model, alpha, prev, cam, obs.flow, flow_filter)
        if flow_data is not None:
            keep, motion = flow_data
            verts = model.contour_landmark_vertices[keep]
            fsys = ProjectionSystem(model, cam, vert_idx=verts)
            proj_prev = fsys.project(alpha, prev.beta, prev.pose)
            flow_block = (fsys, proj_prev, motion)

    s_lm = np.sqrt(ew.align)
    s_ct = np.sqrt(ew.align * weights.sigma_align)
    s_fl = np.sqrt(ew.optic)
    s_tp = np.sqrt(ew.temp * weights.sigma_temp)

    def residual_jacobian(x):
        rows = []
        jacs = []
        proj, jac = lm_sys.project_with_jacobians(alpha, x, pose, wrt=("beta",))
        rows.append(s_lm * (proj - obs.landmarks).reshape(-1))
        jacs.append(s_lm * jac["beta"].reshape(-1, m_e))
        cproj, cjac = contour_sys.project_with_jacobians(alpha, x, pose, wrt=("beta",))
        rows.append(s_ct * (cproj - contour_lm).reshape(-1))
        jacs.append(s_ct * cjac["beta"].reshape(-1, m_e))
        if flow_block is not None:
            fsys, proj_prev, motion = flow_block
            pc, jc = fsys.project_with_jacobians(alpha, x, pose, wrt=("beta",))
            rows.append(s_fl * (pc - proj_prev - motion).reshape(-1))
            jacs.append(s_fl * jc["beta"].reshape(-1, m_e))
        if prev is not None and ew.temp > 0:
            rows.append(s_tp * (x - prev.beta))
            jacs.append(s_tp * np.eye(m_e))
        rb, jb = prior_residuals_jacobian(x, weights.w_prior)
        rows.append(rb)
        jacs.append(jb)
        return np.concatenate(rows), np.vstack(jacs)

    try:
        x, info = solve_least_squares(residual_jacobian, beta0)
    except SolverDivergence as exc:
        raise TrackingError(f"expression solve diverged on frame {obs.index}: {exc}") from exc
    return x, info


# ---------------------------------------------------------------------------
# Full tracking pipeline
# ---------------------------------------------------------------------------

def track(model: FaceModel, observations: list[FrameObservation], cam: Camera,
          weights: EnergyWeights | None = None, options: TrackOptions | None = None,
          ) -> TrackResult:
    """Pose phase -> identity bundle -> expression phase, deterministically."""
    if not observations:
        raise TrackingError("no frames to track")
    weights = weights if weights is not None else EnergyWeights()
    options = options if options is not None else TrackOptions()
    n = len(observations)
    m_e = model.m_e
    diagnostics: dict = {"pose": [], "expression": []}

    from .errors import ReshapeError

    def pose_pass(alpha: np.ndarray | None) -> list[RigidPose]:
        poses: list[RigidPose] = []
        infos = []
        prev = None
        for i, obs in enumerate(observations):
            try:
                pose, info = estimate_pose(model, obs, prev, cam, weights, alpha=alpha,
                                           flow_filter=options.flow_filter)
            except TrackingError:
                raise
            except ReshapeError as exc:
                raise TrackingError(f"pose phase failed on frame {i}: {exc}") from exc
            poses.append(pose)
            infos.append(info)
            prev = PreviousFrame(pose=pose, beta=np.zeros(m_e))
        diagnostics["pose"] = infos
        return poses

    poses = pose_pass(None)

    k = min(options.k_max, 10, n)
    window = select_representative_frames(poses, k)
    diagnostics["identity_window"] = (window.start, window.stop)
    frames = [(observations[i], poses[i]) for i in window]
    alpha, window_betas, id_info = estimate_identity(model, frames, cam, weights,
                                                     flow_filter=options.flow_filter)
    diagnostics["identity"] = id_info

    if options.repose_after_identity:
        # the first pose pass fit the mean face, so pose and identity errors
        # are coupled; alternate re-posing with the fitted identity and
        # re-running the warm-started bundle until alpha settles
        for _ in range(options.max_repose_rounds):
            poses = pose_pass(alpha)
            frames = [(observations[i], poses[i]) for i in window]
            alpha_new, window_betas, id_info = estimate_identity(
                model, frames, cam, weights, flow_filter=options.flow_filter,
                alpha_init=alpha, betas_init=window_betas)
            diagnostics["identity"] = id_info
            change = np.linalg.norm(alpha_new - alpha)
            alpha = alpha_new
            if change < options.repose_tol:
                break

    betas = np.zeros((n, m_e))
    prev = None
    infos = []
    for i, obs in enumerate(observations):
        beta_init = betas[i - 1] if i > 0 else None
        try:
            beta, info = estimate_expression(model, alpha, obs, poses[i], prev, cam,
                                             weights, flow_filter=options.flow_filter,
                                             beta_init=beta_init)
        except TrackingError:
            raise
        except ReshapeError as exc:
            raise TrackingError(f"expression phase failed on frame {i}: {exc}") from exc
        betas[i] = beta
        infos.append(info)
        prev = PreviousFrame(pose=poses[i], beta=beta)
    diagnostics["expression"] = infos

    return TrackResult(poses=poses, alpha=alpha, betas=betas, diagnostics=diagnostics)
