"""Silhouette extraction: z-buffer rasterization of the projected face mesh
and Moore-neighbor tracing of the coverage-mask boundary.

Each silhouette sample is anchored to the visible surface (triangle index +
perspective-corrected barycentric coordinates) so it can be re-evaluated on a
deformed mesh.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, RigidPose, transform_points
from .errors import GeometryError, ProjectionError
from .model import FaceMesh


@dataclass
class RasterBuffers:
    depth: np.ndarray    # (h, w) float64, +inf where empty
    tri_id: np.ndarray   # (h, w) int32, -1 where empty
    bary: np.ndarray     # (h, w, 3) affine 2D barycentric of the pixel center

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0


@dataclass
class Silhouette:
    """Ordered closed boundary of the projected face (last point links to the
    first). Anchors reference the front-most visible triangle per pixel."""

    points: np.ndarray       # (m, 2) pixel coords
    anchor_tris: np.ndarray  # (m,) int32
    anchor_barys: np.ndarray  # (m, 3) perspective-corrected barycentric
    labels: np.ndarray       # (m,) uint8 region label

    def __len__(self) -> int:
        return len(self.points)

    @property
    def closed_points(self) -> np.ndarray:
        return np.vstack([self.points, self.points[:1]])


def rasterize_mesh(vertices_cam: np.ndarray, projections: np.ndarray,
                   triangles: np.ndarray, size: tuple[int, int]) -> RasterBuffers:
    """Depth-buffered triangle rasterization at integer pixel centers."""
    w, h = size
    depth = np.full((h, w), np.inf)
    tri_id = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3))
    z = vertices_cam[:, 2]
    for ti, (ia, ib, ic) in enumerate(triangles):
        pa, pb, pc = projections[ia], projections[ib], projections[ic]
        denom = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if abs(denom) < 1e-12:
            continue
        x0 = max(int(np.ceil(min(pa[0], pb[0], pc[0]))), 0)
        x1 = min(int(np.floor(max(pa[0], pb[0], pc[0]))), w - 1)
        y0 = max(int(np.ceil(min(pa[1], pb[1], pc[1]))), 0)
        y1 = min(int(np.floor(max(pa[1], pb[1], pc[1]))), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        dx = gx - pa[0]
        dy = gy - pa[1]
        lb = (dx * (pc[1] - pa[1]) - dy * (pc[0] - pa[0])) / denom
        lc = ((pb[0] - pa[0]) * dy - (pb[1] - pa[1]) * dx) / denom
        la = 1.0 - lb - lc
        inside = (la >= -1e-9) & (lb >= -1e-9) & (lc >= -1e-9)
        if not inside.any():
            continue
        zi = la * z[ia] + lb * z[ib] + lc * z[ic]
        closer = inside & (zi < depth[y0:y1 + 1, x0:x1 + 1])
        if not closer.any():
            continue
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        depth[sub] = np.where(closer, zi, depth[sub])
        tri_id[sub] = np.where(closer, ti, tri_id[sub])
        for k, lam in enumerate((la, lb, lc)):
            bary[sub[0], sub[1], k] = np.where(closer, lam, bary[sub[0], sub[1], k])
    return RasterBuffers(depth=depth, tri_id=tri_id, bary=bary)


# Moore neighborhood in clockwise order starting at "west" (dx, dy).
_MOORE = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]


def trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Ordered outer boundary of a binary mask (Moore-neighbor tracing with
    Jacob's stopping criterion). Returns (m, 2) pixel coordinates (x, y)."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise GeometryError("empty raster mask")
    start_idx = np.lexsort((xs, ys))[0]  # topmost, then leftmost
    start = (int(xs[start_idx]), int(ys[start_idx]))

    def filled(p):
        x, y = p
        return 0 <= x < w and 0 <= y < h and bool(mask[y, x])

    boundary = [start]
    cur = start
    back = (start[0] - 1, start[1])  # west neighbor, empty by scan order
    start_back = back
    limit = 4 * (h * w + 1)
    for _ in range(limit):
        anchor = _MOORE.index((back[0] - cur[0], back[1] - cur[1]))
        nxt = None
        for k in range(1, 9):
            d = (anchor + k) % 8
            cand = (cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1])
            if filled(cand):
                prev_d = (anchor + k - 1) % 8
                back = (cur[0] + _MOORE[prev_d][0], cur[1] + _MOORE[prev_d][1])
                nxt = cand
                break
        if nxt is None:
            break  # isolated pixel
        cur = nxt
        if cur == start and back == start_back:
            break
        boundary.append(cur)
    return np.asarray(boundary, dtype=np.float64)


def _scaled_camera(cam: Camera, resolution: tuple[int, int]) -> Camera:
    w, h = cam.image_size
    rw, rh = resolution
    if (rw, rh) == (w, h):
        return cam
    sx, sy = rw / w, rh / h
    return Camera(focal=cam.focal * sx,
                  principal_point=np.array([cam.principal_point[0] * sx,
                                            cam.principal_point[1] * sy]),
                  image_size=(rw, rh))


def extract_silhouette(mesh: FaceMesh, pose: RigidPose, cam: Camera,
                       resolution: tuple[int, int] | None = None,
                       supersample: int = 1) -> Silhouette:
    """Outer boundary of the projected mesh with per-point surface anchors.

    `supersample` rasterizes at an s-times finer grid (points are returned in
    the original pixel coordinates), reducing the half-pixel quantization bias
    of the traced boundary.
    """
    cam_r = _scaled_camera(cam, resolution) if resolution is not None else cam
    if supersample > 1:
        w, h = cam_r.image_size
        cam_r = _scaled_camera(cam_r, (w * supersample, h * supersample))
    verts_cam = transform_points(mesh.vertices, pose)
    z = verts_cam[:, 2]
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise ProjectionError(f"vertex {int(bad[0])} has nonpositive depth")
    proj = cam_r.focal * verts_cam[:, :2] / z[:, None] + cam_r.principal_point
    buffers = rasterize_mesh(verts_cam, proj, mesh.triangles, cam_r.image_size)
    pts = trace_boundary(buffers.mask)
    ix = pts[:, 0].astype(int)
    iy = pts[:, 1].astype(int)
    tri = buffers.tri_id[iy, ix]
    lam = buffers.bary[iy, ix]  # affine 2D barycentric
    corner_z = z[mesh.triangles[tri]]  # (m, 3)
    wdepth = lam / corner_z
    barys = wdepth / wdepth.sum(axis=1, keepdims=True)
    corner_labels = mesh.model.region_labels[mesh.triangles[tri]]
    labels = corner_labels[np.arange(len(tri)), np.argmax(barys, axis=1)]
    if supersample > 1:
        pts = pts / supersample
    return Silhouette(points=pts, anchor_tris=tri.astype(np.int32),
                      anchor_barys=barys, labels=labels.astype(np.uint8))
