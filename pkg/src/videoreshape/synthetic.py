"""Synthetic ground-truth scenarios: a procedurally generated face model plus
rendered frame sequences with exact landmarks and optical flow.

Everything is deterministic under a fixed seed. Scenario files are written in
the pipeline's real input formats (PNG frames, landmark JSONL, .flo files) so
end-to-end tests exercise the production parsers.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, RigidPose, default_camera, rotation_matrix, transform_points
from .fileio import flow_filename, frame_filename, write_flo, write_landmarks_jsonl
from .model import FaceMesh, FaceModel, REGION_CODES, assemble, project, save_model
from .silhouette import rasterize_mesh

# ---------------------------------------------------------------------------
# Procedural face model
# ---------------------------------------------------------------------------

FACE_HALF_WIDTH = 0.8
FACE_HALF_HEIGHT = 1.05
FLOW_EXTEND_PX = 6  # motion extrapolation band outside the face mask


def _gauss2(x, y, cx, cy, sx, sy):
    return np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))


def _height_profile(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    rho2 = (x / FACE_HALF_WIDTH) ** 2 + (y / FACE_HALF_HEIGHT) ** 2
    dome = 0.35 * np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    nose = 0.27 * _gauss2(x, y, 0.0, 0.12, 0.14, 0.20)
    brow = 0.06 * _gauss2(x, y, 0.0, -0.42, 0.45, 0.12)
    chin = 0.10 * _gauss2(x, y, 0.0, 0.85, 0.24, 0.16)
    return dome + nose + brow + chin


def _region_of(x: float, y: float) -> int:
    if abs(x) < 0.22 and -0.12 < y < 0.45:
        return REGION_CODES["nose"]
    if y < -0.52:
        return REGION_CODES["forehead"]
    if y > 0.66 and abs(x) < 0.45:
        return REGION_CODES["chin"]
    if x <= -0.24:
        return REGION_CODES["cheek-l"]
    if x >= 0.24:
        return REGION_CODES["cheek-r"]
    return REGION_CODES["other"]


def _smooth_field(xy: np.ndarray, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    """Random smooth (n, 3) displacement field: a few broad Gaussian bumps."""
    n = len(xy)
    out = np.zeros((n, 3))
    for _ in range(4):
        cx = rng.uniform(-0.7, 0.7)
        cy = rng.uniform(-0.95, 0.95)
        sx = rng.uniform(0.5, 0.9)
        sy = rng.uniform(0.5, 0.9)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        bump = _gauss2(xy[:, 0], xy[:, 1], cx, cy, sx, sy)
        out += amplitude * rng.uniform(0.4, 1.0) * bump[:, None] * direction
    return out


def _identity_modes(xy: np.ndarray) -> list[np.ndarray]:
    """Leading identity components: global face-shape modes in the style of a
    statistical face model (width, length, cheeks, jaw, chin, nose, ...)."""
    x, y = xy[:, 0], xy[:, 1]
    n = len(xy)
    zeros = np.zeros(n)
    rho = np.sqrt((x / FACE_HALF_WIDTH) ** 2 + (y / FACE_HALF_HEIGHT) ** 2)
    cheeks = _gauss2(x, y, -0.45, 0.25, 0.3, 0.4) + _gauss2(x, y, 0.45, 0.25, 0.3, 0.4)
    lower = _gauss2(x, y, 0.0, 0.75, 0.6, 0.35)
    modes = [
        np.column_stack([0.08 * x, zeros, zeros]),                 # width
        np.column_stack([zeros, 0.06 * y, zeros]),                 # length
        np.column_stack([zeros, zeros, -0.07 * cheeks]),           # cheek fullness
        np.column_stack([0.07 * x * lower, zeros, zeros]),         # jaw width
        np.column_stack([zeros, 0.08 * _gauss2(x, y, 0, 0.9, 0.3, 0.25), zeros]),
        np.column_stack([zeros, zeros, -0.08 * _gauss2(x, y, 0, 0.15, 0.16, 0.22)]),
        np.column_stack([zeros, zeros, -0.06 * _gauss2(x, y, 0, -0.42, 0.5, 0.15)]),
        np.column_stack([zeros, -0.05 * y * _gauss2(x, y, 0, -0.7, 0.6, 0.3), zeros]),
        np.column_stack([0.05 * x * (1 - rho), 0.05 * y * (1 - rho), zeros]),
        np.column_stack([0.05 * _gauss2(x, y, 0, 0.8, 0.4, 0.3), zeros, zeros]),
    ]
    return [m.reshape(-1) for m in modes]


# 68-landmark template: 17 jawline (contour-flagged) + brows, eyes, nose, mouth
def _landmark_template() -> tuple[np.ndarray, np.ndarray]:
    pts = []
    # jawline: along the rim, left temple -> chin -> right temple
    ang = np.linspace(np.radians(185.0), np.radians(-5.0), 17)
    for a in ang:  # y points down: the sweep passes through the chin at 90 deg;
        # radius 1.0 puts the jawline on the mesh rim, i.e. on the silhouette
        pts.append((FACE_HALF_WIDTH * np.cos(a), FACE_HALF_HEIGHT * np.sin(a)))
    for s in (-1, 1):  # brows, 5 each
        for i in range(5):
            pts.append((s * (0.15 + 0.09 * i), -0.44 + 0.015 * i))
    for s in (-1, 1):  # eyes, 6 each
        for i in range(6):
            a = 2 * np.pi * i / 6
            pts.append((s * 0.33 + 0.08 * np.cos(a), -0.24 + 0.045 * np.sin(a)))
    for i in range(4):  # nose bridge
        pts.append((0.0, -0.12 + 0.12 * i))
    for i in range(5):  # nostril row
        pts.append((-0.10 + 0.05 * i, 0.36))
    for i in range(20):  # mouth
        a = 2 * np.pi * i / 20
        pts.append((0.20 * np.cos(a), 0.56 + 0.08 * np.sin(a)))
    pts = np.asarray(pts)
    contour = np.zeros(len(pts), dtype=bool)
    contour[:17] = True
    return pts, contour


def _remove_similarity_components(basis: np.ndarray, mean: np.ndarray,
                                  observed: np.ndarray | None = None) -> np.ndarray:
    """Project the similarity-transform directions (translations, infinitesimal
    rotations, uniform scale about the centroid) out of each basis vector.

    Mirrors the Procrustes alignment of statistical face model training data;
    without it some shape directions alias exactly with pose and depth and are
    unobservable from a monocular fit. The fit only sees the landmark/contour
    vertices, so the projection coefficients are solved on that subset when
    `observed` is given (full-mesh similarity fields are subtracted).
    """
    verts = mean.reshape(-1, 3)
    centered = verts - verts.mean(axis=0)
    n = len(verts)
    gens = []
    for axis in range(3):
        t = np.zeros((n, 3))
        t[:, axis] = 1.0
        gens.append(t.reshape(-1))
    for axis in range(3):
        w = np.zeros(3)
        w[axis] = 1.0
        gens.append(np.cross(np.broadcast_to(w, (n, 3)), centered).reshape(-1))
    gens.append(centered.reshape(-1))  # uniform scale
    # generalized bas-relief family: depth fields z' = a z + b x + c y alias
    # with small pose changes under near-frontal projection
    for comp in range(3):
        g = np.zeros((n, 3))
        g[:, 2] = centered[:, comp]
        gens.append(g.reshape(-1))
    G = np.asarray(gens)  # (10, 3n)
    if observed is None:
        Q, _ = np.linalg.qr(G.T)
        return basis - (basis @ Q) @ Q.T
    mask = np.zeros(n, dtype=bool)
    mask[observed] = True
    cols = np.repeat(mask, 3)
    G_obs = G[:, cols]
    coef, *_ = np.linalg.lstsq(G_obs.T, basis[:, cols].T, rcond=None)
    return basis - coef.T @ G


def make_face_model(rings: int = 16, sectors: int = 48, n_identity: int = 63,
                    n_expression: int = 6, seed: int = 7) -> FaceModel:
    """Procedural face-like model: radial mesh over an ellipse, bulging toward
    -z (the camera at frontal pose), with smooth random identity/expression
    bases and a weight-change displacement basis."""
    rng = np.random.default_rng(seed)
    xy = [(0.0, 0.0)]
    for k in range(1, rings + 1):
        frac = k / rings
        for s in range(sectors):
            a = 2 * np.pi * s / sectors
            xy.append((frac * FACE_HALF_WIDTH * np.cos(a),
                       frac * FACE_HALF_HEIGHT * np.sin(a)))
    xy = np.asarray(xy)
    z = -_height_profile(xy[:, 0], xy[:, 1])
    verts = np.column_stack([xy, z])
    n = len(verts)

    tris = []
    for s in range(sectors):  # center fan
        tris.append((0, 1 + s, 1 + (s + 1) % sectors))
    for k in range(rings - 1):
        base0 = 1 + k * sectors
        base1 = 1 + (k + 1) * sectors
        for s in range(sectors):
            s2 = (s + 1) % sectors
            tris.append((base0 + s, base1 + s, base1 + s2))
            tris.append((base0 + s, base1 + s2, base0 + s2))
    triangles = np.asarray(tris, dtype=np.int32)

    labels = np.array([_region_of(x, y) for x, y in xy], dtype=np.uint8)

    template, contour_flags = _landmark_template()
    landmark_vertices = []
    used = set()
    for target in template:
        order = np.argsort(((xy - target) ** 2).sum(axis=1))
        pick = next(int(i) for i in order if int(i) not in used)
        used.add(pick)
        landmark_vertices.append(pick)
    landmark_vertices = np.asarray(landmark_vertices, dtype=np.int32)

    identity = np.zeros((n_identity, 3 * n))
    structured = _identity_modes(xy)
    for k in range(n_identity):
        if k < len(structured):
            identity[k] = structured[k]
        else:
            amp = 0.02 / np.sqrt(1.0 + k - len(structured))
            identity[k] = _smooth_field(xy, rng, amp).reshape(-1)
    expression = np.zeros((n_expression, 3 * n))
    centers = [(0.0, 0.85, 0.28, 0.20), (0.0, 0.56, 0.30, 0.14),
               (0.0, -0.42, 0.45, 0.14), (-0.45, 0.25, 0.25, 0.30),
               (0.45, 0.25, 0.25, 0.30), (0.0, 0.12, 0.18, 0.24)]
    dirs = [(0.0, 1.0, -0.2), (0.6, -0.3, 0.0), (0.0, -1.0, -0.3),
            (0.0, 0.0, -1.0), (0.0, 0.0, -1.0), (0.0, 0.3, -0.8)]
    for k in range(n_expression):
        cx, cy, sx, sy = centers[k % len(centers)]
        d = np.asarray(dirs[k % len(dirs)])
        d = d / np.linalg.norm(d)
        bump = _gauss2(xy[:, 0], xy[:, 1], cx, cy, sx, sy)
        expression[k] = (0.07 * bump[:, None] * d).reshape(-1)

    rim = np.arange(1 + (rings - 1) * sectors, n)
    observed = np.unique(np.concatenate([landmark_vertices, rim]))
    identity = _remove_similarity_components(identity, verts.reshape(-1), observed)
    expression = _remove_similarity_components(expression, verts.reshape(-1), observed)

    # weight-change displacement: lateral widening, strongest on cheeks/chin
    region_gain = np.array([1.0, 1.0, 0.8, 0.05, 0.15, 0.35])  # by REGION_CODES order
    gain = region_gain[labels]
    radial = xy.copy()
    radial[:, 1] *= 0.3
    nrm = np.linalg.norm(radial, axis=1)
    nrm[nrm < 1e-9] = 1.0
    radial /= nrm[:, None]
    rho = np.sqrt((xy[:, 0] / FACE_HALF_WIDTH) ** 2 + (xy[:, 1] / FACE_HALF_HEIGHT) ** 2)
    falloff = np.clip(rho, 0.0, 1.0) ** 1.5  # rim moves most, center barely
    disp = 0.1 * gain[:, None] * falloff[:, None] * np.column_stack(
        [radial, -0.15 * np.ones(n)])
    reshape_basis = disp.reshape(-1)

    ys = xy[:, 1]
    face_length = float(ys.max() - ys.min())

    model = FaceModel(mean_shape=verts.reshape(-1), identity_basis=identity,
                      expression_basis=expression, triangles=triangles,
                      landmark_vertices=landmark_vertices,
                      contour_flags=contour_flags, reshape_basis=reshape_basis,
                      region_labels=labels, face_length=face_length)
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass
class FlowCorruption:
    """Overwrite a flow-field box with a bogus constant motion."""

    frame: int                      # transition into this frame
    box: tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)
    offset: tuple[float, float] = (18.0, -12.0)


@dataclass
class SyntheticScenario:
    model: FaceModel
    alpha: np.ndarray
    betas: np.ndarray               # (frames, m_e)
    poses: list[RigidPose]
    camera: Camera
    landmark_jitter_px: float = 0.0
    corruptions: list[FlowCorruption] = field(default_factory=list)
    seed: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def mesh(self, frame: int) -> FaceMesh:
        return assemble(self.model, self.alpha, self.betas[frame])


def default_scenario(model: FaceModel, n_frames: int = 30, seed: int = 0,
                     image_size: tuple[int, int] = (256, 256),
                     landmark_jitter_px: float = 0.0,
                     alpha_components: int = 12, alpha_scale: float = 0.6,
                     yaw_deg: float = 15.0, pitch_deg: float = 6.0,
                     focal: float | None = None,
                     beta_amp: tuple[float, float] = (0.1, 0.25),
                     ) -> SyntheticScenario:
    rng = np.random.default_rng(seed)
    cam = default_camera(image_size, focal=focal)
    alpha = np.zeros(model.m_s)
    alpha[:alpha_components] = rng.normal(scale=alpha_scale, size=alpha_components)

    betas = np.zeros((n_frames, model.m_e))
    amp = rng.uniform(beta_amp[0], beta_amp[1], size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    tt = np.arange(n_frames)
    for j in range(3):
        betas[:, j] = amp[j] * np.sin(2 * np.pi * tt / max(n_frames, 2) + phase[j])

    # depth such that the face spans roughly half the image height
    z0 = cam.focal * model.face_length / (0.55 * image_size[1])
    poses = []
    for t in range(n_frames):
        s = t / max(n_frames - 1, 1)
        yaw = np.radians(yaw_deg) * np.sin(2 * np.pi * s)
        pitch = np.radians(pitch_deg) * np.sin(2 * np.pi * s + 1.1)
        roll = np.radians(2.0) * np.sin(2 * np.pi * s + 2.3)
        r = np.array([pitch, yaw, roll])
        t_vec = np.array([0.06 * np.sin(2 * np.pi * s + 0.4),
                          0.04 * np.cos(2 * np.pi * s),
                          z0 * (1.0 + 0.02 * np.sin(2 * np.pi * s + 0.9))])
        poses.append(RigidPose(r=r, t=t_vec))
    return SyntheticScenario(model=model, alpha=alpha, betas=betas, poses=poses,
                             camera=cam, landmark_jitter_px=landmark_jitter_px,
                             seed=seed)


@dataclass
class GeneratedSequence:
    landmarks: list[np.ndarray]       # per frame (NL, 2), jitter applied
    landmarks_clean: list[np.ndarray]
    flows: list[np.ndarray | None]    # flows[t]: frame t-1 -> t, None for t=0
    frames: list[np.ndarray]          # (h, w, 3) uint8
    masks: list[np.ndarray]           # face coverage masks


def _render_frame(mesh: FaceMesh, pose: RigidPose, cam: Camera,
                  checker: np.ndarray) -> tuple[np.ndarray, np.ndarray, object]:
    verts_cam = transform_points(mesh.vertices, pose)
    proj = cam.focal * verts_cam[:, :2] / verts_cam[:, 2:3] + cam.principal_point
    buffers = rasterize_mesh(verts_cam, proj, mesh.triangles, cam.image_size)
    img = checker.copy()
    mask = buffers.mask
    tri = buffers.tri_id[mask]
    tv = verts_cam[mesh.triangles[tri]]
    normal = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    light = np.array([0.3, -0.4, -1.0])
    light /= np.linalg.norm(light)
    shade = np.clip(np.abs(normal @ light), 0.25, 1.0)
    base = np.array([172.0, 128.0, 104.0])  # BGR-ish skin tone
    img[mask] = np.clip(shade[:, None] * base[None, :], 0, 255).astype(np.uint8)
    return img, mask, buffers


def _checkerboard(size: tuple[int, int], square: int = 16) -> np.ndarray:
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w]
    tile = ((xx // square + yy // square) % 2).astype(np.uint8)
    img = np.where(tile[..., None] == 0, 78, 118).astype(np.uint8)
    return np.repeat(img, 3, axis=2)


def generate(scenario: SyntheticScenario) -> GeneratedSequence:
    """Landmarks are exact projections (+ optional jitter); flow is the exact
    per-pixel projection displacement inside the face mask; frames are
    flat-shaded renders over a checkerboard."""
    rng = np.random.default_rng(scenario.seed + 1)
    cam = scenario.camera
    checker = _checkerboard(cam.image_size)
    landmarks_clean = []
    landmarks = []
    frames = []
    masks = []
    buffers_list = []
    meshes = [scenario.mesh(t) for t in range(scenario.n_frames)]
    for t in range(scenario.n_frames):
        lm = project(meshes[t], scenario.poses[t], cam)[scenario.model.landmark_vertices]
        landmarks_clean.append(lm)
        if scenario.landmark_jitter_px > 0:
            lm = lm + rng.normal(scale=scenario.landmark_jitter_px, size=lm.shape)
        landmarks.append(lm)
        img, mask, buffers = _render_frame(meshes[t], scenario.poses[t], cam, checker)
        frames.append(img)
        masks.append(mask)
        buffers_list.append(buffers)

    flows: list[np.ndarray | None] = [None]
    w, h = cam.image_size
    for t in range(1, scenario.n_frames):
        prev = buffers_list[t - 1]
        flow = np.zeros((h, w, 2), dtype=np.float32)
        ys, xs = np.nonzero(prev.mask)
        tri = prev.tri_id[ys, xs]
        lam = prev.bary[ys, xs]
        zs = transform_points(meshes[t - 1].vertices, scenario.poses[t - 1])[:, 2]
        corner_z = zs[scenario.model.triangles[tri]]
        wdepth = lam / corner_z
        bary3 = wdepth / wdepth.sum(axis=1, keepdims=True)
        corners_next = meshes[t].vertices[scenario.model.triangles[tri]]
        pts_next = np.einsum("kc,kcd->kd", bary3, corners_next)
        pc = transform_points(pts_next, scenario.poses[t])
        proj_next = cam.focal * pc[:, :2] / pc[:, 2:3] + cam.principal_point
        flow[ys, xs, 0] = proj_next[:, 0] - xs
        flow[ys, xs, 1] = proj_next[:, 1] - ys
        # real flow fields stay smooth across the occlusion boundary; extend
        # the face motion into a small band so contour sampling sees no cliff
        from scipy import ndimage

        _, (iy, ix) = ndimage.distance_transform_edt(~prev.mask, return_indices=True)
        band = ndimage.binary_dilation(prev.mask, iterations=FLOW_EXTEND_PX) & ~prev.mask
        flow[band] = flow[iy[band], ix[band]]
        for corr in scenario.corruptions:
            if corr.frame == t:
                x0, y0, x1, y1 = corr.box
                flow[y0:y1, x0:x1, 0] = corr.offset[0]
                flow[y0:y1, x0:x1, 1] = corr.offset[1]
        flows.append(flow)
    return GeneratedSequence(landmarks=landmarks, landmarks_clean=landmarks_clean,
                             flows=flows, frames=frames, masks=masks)


def write_scenario(scenario: SyntheticScenario, seq: GeneratedSequence,
                   directory: str, model_filename: str = "face.prfm") -> dict:
    """Write the scenario in the pipeline's input formats; returns the paths."""
    import cv2

    os.makedirs(directory, exist_ok=True)
    frames_dir = os.path.join(directory, "frames")
    flow_dir = os.path.join(directory, "flow")
    os.makedirs(frames_dir, exist_ok=True)
    os.makedirs(flow_dir, exist_ok=True)
    for t, img in enumerate(seq.frames):
        cv2.imwrite(os.path.join(frames_dir, frame_filename(t)), img)
    for t in range(1, scenario.n_frames):
        write_flo(os.path.join(flow_dir, flow_filename(t)), seq.flows[t])
    lm_path = os.path.join(directory, "landmarks.jsonl")
    write_landmarks_jsonl(lm_path, {t: seq.landmarks[t] for t in range(scenario.n_frames)})
    model_path = os.path.join(directory, model_filename)
    save_model(scenario.model, model_path)
    return {"frames": frames_dir, "flow": flow_dir, "landmarks": lm_path,
            "model": model_path}
