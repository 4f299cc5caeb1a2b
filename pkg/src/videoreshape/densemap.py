"""SDF-guided dense mapping between the face contour before and after
reshaping, with 3D-structure (region label) correction.

For every original-silhouette pixel the reshape displacement of its surface
anchor gives a candidate target; candidates that miss the reshaped silhouette
are walked along the original contour's SDF gradient until they reach it.
Pairs whose endpoints disagree on the face region are invalidated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, RigidPose, project_points
from .errors import MappingError
from .model import FaceMesh
from .sdf import SdfGrid, compute_sdf, polyline_distance, signed_distance
from .silhouette import Silhouette, extract_silhouette

WALK_STEP_PX = 0.5
WALK_TOLERANCE_PX = 0.75
WALK_MAX_STEPS = 200
MAX_FAIL_FRACTION = 0.05
SDF_WINDOW_MARGIN_PX = 16.0


@dataclass
class DenseContourMapping:
    source: np.ndarray   # (m, 2) original-silhouette pixels
    target: np.ndarray   # (m, 2) mapped pixels on the reshaped silhouette
    valid: np.ndarray    # (m,) bool
    labels: np.ndarray   # (m,) uint8 source region labels
    walked: np.ndarray = field(default=None)  # (m,) bool diagnostics
    grad_norms: np.ndarray = field(default=None)  # gradient norms seen while walking

    def valid_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.source[self.valid], self.target[self.valid]


def _nearest_segment_labels(points: np.ndarray, sil: Silhouette) -> np.ndarray:
    """Region label of the silhouette sample nearest to each point."""
    d2 = ((points[:, None, :] - sil.points[None, :, :]) ** 2).sum(axis=2)
    return sil.labels[np.argmin(d2, axis=1)]


def _anchor_points(mesh: FaceMesh, sil: Silhouette) -> np.ndarray:
    corners = mesh.vertices[mesh.triangles[sil.anchor_tris]]
    return np.einsum("kc,kcd->kd", sil.anchor_barys, corners)


def dense_mapping(orig: FaceMesh, reshaped: FaceMesh, pose: RigidPose, cam: Camera,
                  sil_orig: Silhouette | None = None,
                  sil_reshaped: Silhouette | None = None,
                  sdf: SdfGrid | None = None) -> DenseContourMapping:
    if orig.model.triangles is not reshaped.model.triangles and \
            not np.array_equal(orig.model.triangles, reshaped.model.triangles):
        raise MappingError("meshes do not share topology")
    if sil_orig is None:
        sil_orig = extract_silhouette(orig, pose, cam)
    if sil_reshaped is None:
        sil_reshaped = extract_silhouette(reshaped, pose, cam)

    source = sil_orig.points.copy()
    m = len(source)
    # candidate = source + projected displacement of the surface anchor; using
    # the displacement cancels the sub-pixel rasterization bias of the anchor
    proj_o = project_points(_anchor_points(orig, sil_orig), pose, cam)
    proj_r = project_points(_anchor_points(reshaped, sil_orig), pose, cam)
    target = source + (proj_r - proj_o)

    resh_pts = sil_reshaped.points
    dist, nearest, _ = polyline_distance(target, resh_pts)
    ok = dist <= WALK_TOLERANCE_PX
    valid = ok.copy()
    walked = np.zeros(m, dtype=bool)
    grad_norms: list[float] = []

    pending = np.nonzero(~ok)[0]
    if pending.size:
        if sdf is None:
            allpts = np.vstack([sil_orig.points, resh_pts])
            lo = allpts.min(axis=0) - SDF_WINDOW_MARGIN_PX - WALK_STEP_PX * WALK_MAX_STEPS * 0.25
            hi = allpts.max(axis=0) + SDF_WINDOW_MARGIN_PX + WALK_STEP_PX * WALK_MAX_STEPS * 0.25
            size = (int(np.ceil(hi[0] - lo[0])) + 1, int(np.ceil(hi[1] - lo[1])) + 1)
            sdf = compute_sdf(sil_orig.closed_points, size, origin=(lo[0], lo[1]))
        pos = source[pending].copy()
        # walk outward when the reshaped contour lies outside the original one
        side = signed_distance(pos, resh_pts)
        direction = -np.sign(side)
        direction[direction == 0] = 1.0
        active = np.ones(len(pending), dtype=bool)
        done = np.zeros(len(pending), dtype=bool)
        for _ in range(WALK_MAX_STEPS):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            d, near, _ = polyline_distance(pos[idx], resh_pts)
            reached = d <= WALK_TOLERANCE_PX
            if reached.any():
                hit = idx[reached]
                pos[hit] = near[reached]  # snap onto the reshaped contour
                done[hit] = True
                active[hit] = False
                idx = idx[~reached]
            if idx.size == 0:
                break
            g = sdf.gradient(pos[idx])
            gn = np.linalg.norm(g, axis=1)
            grad_norms.extend(gn.tolist())
            degenerate = gn < 1e-6
            if degenerate.any():
                active[idx[degenerate]] = False
                idx = idx[~degenerate]
                if idx.size == 0:
                    break
                g = g[~degenerate]
                gn = gn[~degenerate]
            step = (direction[idx, None] * WALK_STEP_PX) * (g / gn[:, None])
            pos[idx] = pos[idx] + step
            escaped = ~sdf.contains(pos[idx])
            if escaped.any():
                active[idx[escaped]] = False
        target[pending] = pos
        valid[pending] = done
        walked[pending[done]] = True
        fail_fraction = float((~done).sum()) / m
        if fail_fraction > MAX_FAIL_FRACTION:
            raise MappingError(
                f"SDF walk failed for {fail_fraction:.1%} of contour pixels "
                "(degenerate reshape)")

    # 3D-structure correction: reject pairs whose target lands on a part of
    # the reshaped contour with a different region label (nose vs cheek).
    src_labels = sil_orig.labels.copy()
    if valid.any():
        vidx = np.nonzero(valid)[0]
        tgt_labels = _nearest_segment_labels(target[vidx], sil_reshaped)
        valid[vidx] &= tgt_labels == src_labels[vidx]

    return DenseContourMapping(source=source, target=target, valid=valid,
                               labels=src_labels, walked=walked,
                               grad_norms=np.asarray(grad_norms))
