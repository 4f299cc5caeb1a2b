"""2D signed distance fields of closed pixel-space contours.

Distances are exact point-to-polyline distances; the sign comes from
even-odd crossing parity (negative inside).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CHUNK_BUDGET = 4_000_000  # point x segment pairs per chunk


def _close_or_raise(contour: np.ndarray) -> np.ndarray:
    contour = np.asarray(contour, dtype=np.float64)
    if contour.ndim != 2 or contour.shape[1] != 2 or len(contour) < 4:
        raise ValueError("contour must be an explicitly closed (m, 2) polyline")
    if not np.allclose(contour[0], contour[-1], atol=1e-9):
        raise ValueError("open contour: first and last points differ")
    return contour[:-1]


def polyline_distance(points: np.ndarray, vertices: np.ndarray,
                      closed: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact distance from each point to a polyline.

    Returns (distance, nearest point, arclength parameter of the nearest
    point). `vertices` has no duplicated endpoint; closure is implied when
    `closed` is True.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = np.asarray(vertices, dtype=np.float64)
    b = np.roll(a, -1, axis=0) if closed else a[1:]
    if not closed:
        a = a[:-1]
    ab = b - a
    ab2 = np.maximum((ab * ab).sum(axis=1), 1e-300)
    seg_len = np.sqrt((ab * ab).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])[:-1]

    n = len(points)
    s = len(a)
    dist = np.empty(n)
    nearest = np.empty((n, 2))
    arclen = np.empty(n)
    chunk = max(1, _CHUNK_BUDGET // max(s, 1))
    a2 = (a * a).sum(axis=1)
    aab = (a * ab).sum(axis=1)
    for i0 in range(0, n, chunk):
        p = points[i0:i0 + chunk]
        p2 = (p * p).sum(axis=1)
        # |p - (a + t ab)|^2 expanded without the (c, s, 2) intermediate
        w = p @ ab.T
        w -= aab[None]                     # (c, s) = ap . ab
        t = np.clip(w / ab2[None], 0.0, 1.0)
        d2 = p @ a.T
        d2 *= -2.0
        d2 += p2[:, None]
        d2 += a2[None]
        w *= 2.0
        w -= t * ab2[None]
        w *= t
        d2 -= w
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        tk = t[rows, k]
        dist[i0:i0 + chunk] = np.sqrt(np.maximum(d2[rows, k], 0.0))
        nearest[i0:i0 + chunk] = a[k] + tk[:, None] * ab[k]
        arclen[i0:i0 + chunk] = cum[k] + tk * seg_len[k]
    return dist, nearest, arclen


def points_inside(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd crossing parity test against the implied-closed polygon."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = np.asarray(vertices, dtype=np.float64)
    b = np.roll(a, -1, axis=0)
    n = len(points)
    s = len(a)
    inside = np.zeros(n, dtype=bool)
    chunk = max(1, _CHUNK_BUDGET // max(s, 1))
    ay, by = a[:, 1], b[:, 1]
    for i0 in range(0, n, chunk):
        px = points[i0:i0 + chunk, 0][:, None]
        py = points[i0:i0 + chunk, 1][:, None]
        straddles = (ay[None] > py) != (by[None] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = a[:, 0][None] + (py - ay[None]) * (b[:, 0] - a[:, 0])[None] / (by - ay)[None]
        crossings = straddles & (px < x_at)
        inside[i0:i0 + chunk] = (crossings.sum(axis=1) % 2).astype(bool)
    return inside


def signed_distance(points: np.ndarray, contour_vertices: np.ndarray) -> np.ndarray:
    d, _, _ = polyline_distance(points, contour_vertices)
    sign = np.where(points_inside(points, contour_vertices), -1.0, 1.0)
    return sign * d


@dataclass
class SdfGrid:
    """Per-pixel signed distance, negative inside the contour. `origin` is the
    pixel coordinate of values[0, 0]."""

    values: np.ndarray       # (h, w)
    origin: np.ndarray       # (2,) pixel coords of grid cell (0, 0)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        gy, gx = np.gradient(self.values)
        self._grad = np.stack([gx, gy], axis=-1)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def _bilinear(self, grid: np.ndarray, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points) - self.origin
        x = np.clip(p[:, 0], 0.0, self.width - 1.000001)
        y = np.clip(p[:, 1], 0.0, self.height - 1.000001)
        x0 = np.floor(x).astype(int)
        y0 = np.floor(y).astype(int)
        fx = (x - x0)[..., None] if grid.ndim == 3 else (x - x0)
        fy = (y - y0)[..., None] if grid.ndim == 3 else (y - y0)
        v00 = grid[y0, x0]
        v10 = grid[y0, x0 + 1]
        v01 = grid[y0 + 1, x0]
        v11 = grid[y0 + 1, x0 + 1]
        return (v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy)
                + v01 * (1 - fx) * fy + v11 * fx * fy)

    def sample(self, points: np.ndarray) -> np.ndarray:
        return self._bilinear(self.values, points)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Bilinearly interpolated central-difference gradient, (n, 2)."""
        return self._bilinear(self._grad, points)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points) - self.origin
        return ((p[:, 0] >= 0) & (p[:, 0] <= self.width - 1)
                & (p[:, 1] >= 0) & (p[:, 1] <= self.height - 1))


def compute_sdf(contour: np.ndarray, size: tuple[int, int],
                origin: tuple[float, float] = (0.0, 0.0)) -> SdfGrid:
    """Signed distance grid of an explicitly closed contour polyline.

    `size` is (width, height) in pixels; `origin` offsets the grid window so a
    sub-window of the image can be evaluated.
    """
    vertices = _close_or_raise(contour)
    w, h = int(size[0]), int(size[1])
    ox, oy = origin
    gx, gy = np.meshgrid(np.arange(w) + ox, np.arange(h) + oy)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    sd = signed_distance(pts, vertices)
    return SdfGrid(values=sd.reshape(h, w), origin=np.array([ox, oy], dtype=np.float64))
