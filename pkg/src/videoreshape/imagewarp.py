"""Piecewise-bilinear image resampling driven by a deformed warp grid.

The deformed lattice defines the forward map per cell; output pixels are
filled by inverting that map (vectorized Newton iteration, with a per-cell
inverse-bilinear fallback for pixels Newton cannot resolve). Pixels covered
by no deformed cell keep the source value. Cells that are bitwise at rest are
untouched, so an identity grid reproduces the input exactly.
"""
from __future__ import annotations

import logging

import numpy as np

from .warpgrid import WarpGrid

log = logging.getLogger(__name__)

_UV_TOL = 1e-7
_NEWTON_ITERS = 12
_NEWTON_TOL = 1e-9


def _bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    img = image.astype(np.float64)
    if img.ndim == 2:
        img = img[..., None]
        squeeze = True
    else:
        squeeze = False
    fx = fx[..., None]
    fy = fy[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
         + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)
    return v[..., 0] if squeeze else v


def _cell_corners(grid: WarpGrid, cx: np.ndarray, cy: np.ndarray):
    p = grid.positions
    return p[cy, cx], p[cy, cx + 1], p[cy + 1, cx], p[cy + 1, cx + 1]


def warp_points(points: np.ndarray, grid: WarpGrid) -> np.ndarray:
    """Forward-map points through the piecewise-bilinear deformation."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dx, dy = grid.cell_size()
    x0, y0 = grid.rest[0, 0]
    cx = np.clip(((pts[:, 0] - x0) / dx).astype(int), 0, grid.cols - 2)
    cy = np.clip(((pts[:, 1] - y0) / dy).astype(int), 0, grid.rows - 2)
    u = np.clip((pts[:, 0] - (x0 + cx * dx)) / dx, 0.0, 1.0)
    v = np.clip((pts[:, 1] - (y0 + cy * dy)) / dy, 0.0, 1.0)
    c00, c10, c01, c11 = _cell_corners(grid, cx, cy)
    uu = u[:, None]
    vv = v[:, None]
    return (c00 * (1 - uu) * (1 - vv) + c10 * uu * (1 - vv)
            + c01 * (1 - uu) * vv + c11 * uu * vv)


def _forward_with_jacobian(s: np.ndarray, grid: WarpGrid):
    dx, dy = grid.cell_size()
    x0, y0 = grid.rest[0, 0]
    cx = np.clip(np.floor((s[:, 0] - x0) / dx).astype(int), 0, grid.cols - 2)
    cy = np.clip(np.floor((s[:, 1] - y0) / dy).astype(int), 0, grid.rows - 2)
    u = (s[:, 0] - (x0 + cx * dx)) / dx
    v = (s[:, 1] - (y0 + cy * dy)) / dy
    c00, c10, c01, c11 = _cell_corners(grid, cx, cy)
    uu = u[:, None]
    vv = v[:, None]
    f = (c00 * (1 - uu) * (1 - vv) + c10 * uu * (1 - vv)
         + c01 * (1 - uu) * vv + c11 * uu * vv)
    dfu = ((c10 - c00) * (1 - vv) + (c11 - c01) * vv) / dx
    dfv = ((c01 - c00) * (1 - uu) + (c11 - c10) * uu) / dy
    return f, dfu, dfv


def _invert_bilinear(p: np.ndarray, c00, c10, c01, c11
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form inverse of one cell's bilinear map (quadratic in v); picks
    the root whose (u, v) lies closest to the unit box. Returns (u, v, err)."""
    a = c00
    b = c10 - c00
    c = c01 - c00
    d = c11 - c10 - c01 + c00
    q = p - a
    A = d[0] * (-c[1]) - d[1] * (-c[0])
    B = b[0] * (-c[1]) - b[1] * (-c[0]) + d[0] * q[:, 1] - d[1] * q[:, 0]
    C = b[0] * q[:, 1] - b[1] * q[:, 0]

    n = len(p)
    vs = np.full((n, 2), np.nan)
    if abs(A) < 1e-12:
        with np.errstate(divide="ignore", invalid="ignore"):
            vs[:, 0] = np.where(np.abs(B) > 1e-300, -C / B, np.nan)
    else:
        disc = B * B - 4.0 * A * C
        root = np.sqrt(np.maximum(disc, 0.0))
        valid = disc >= -1e-9
        vs[valid, 0] = (-B[valid] + root[valid]) / (2.0 * A)
        vs[valid, 1] = (-B[valid] - root[valid]) / (2.0 * A)

    best_u = np.full(n, np.nan)
    best_v = np.full(n, np.nan)
    best_err = np.full(n, np.inf)
    for k in range(2):
        v = vs[:, k]
        ok = np.isfinite(v)
        if not ok.any():
            continue
        denom_x = b[0] + v * d[0]
        denom_y = b[1] + v * d[1]
        use_x = np.abs(denom_x) >= np.abs(denom_y)
        with np.errstate(divide="ignore", invalid="ignore"):
            ux = (q[:, 0] - v * c[0]) / denom_x
            uy = (q[:, 1] - v * c[1]) / denom_y
        u = np.where(use_x, ux, uy)
        err = (np.maximum(0, -u) + np.maximum(0, u - 1)
               + np.maximum(0, -v) + np.maximum(0, v - 1))
        err = np.where(ok & np.isfinite(u), err, np.inf)
        better = err < best_err
        best_err = np.where(better, err, best_err)
        best_u = np.where(better, u, best_u)
        best_v = np.where(better, v, best_v)
    return best_u, best_v, best_err


def _deformed_cells(grid: WarpGrid) -> tuple[np.ndarray, np.ndarray]:
    positions, rest = grid.positions, grid.rest
    moved = (positions != rest).any(axis=-1)
    cells = moved[:-1, :-1] | moved[1:, :-1] | moved[:-1, 1:] | moved[1:, 1:]
    cy, cx = np.nonzero(cells)
    return cx, cy


def warp_image(image: np.ndarray, grid: WarpGrid) -> np.ndarray:
    """Resample `image` through the deformed grid."""
    h, w = image.shape[:2]
    out = image.copy()
    cx, cy = _deformed_cells(grid)
    if len(cx) == 0:
        return out

    # fold warning: quad orientation must be consistent
    c00, c10, c01, c11 = _cell_corners(grid, cx, cy)
    e = [c10 - c00, c11 - c10, c01 - c11, c00 - c01]
    crosses = np.stack([e[i][:, 0] * e[(i + 1) % 4][:, 1]
                        - e[i][:, 1] * e[(i + 1) % 4][:, 0] for i in range(4)], axis=1)
    folded_cells = ~((crosses >= 0).all(axis=1) | (crosses <= 0).all(axis=1))
    if folded_cells.any():
        k = int(np.nonzero(folded_cells)[0][0])
        log.warning("%d folded warp cell(s), e.g. (%d, %d); using nearest-valid "
                    "sampling", int(folded_cells.sum()), int(cy[k]), int(cx[k]))

    # candidate output pixels: union of deformed-cell bboxes
    quads = np.stack([c00, c10, c01, c11], axis=1)  # (n, 4, 2)
    x0 = max(int(np.ceil(quads[:, :, 0].min())), 0)
    x1 = min(int(np.floor(quads[:, :, 0].max())), w - 1)
    y0 = max(int(np.ceil(quads[:, :, 1].min())), 0)
    y1 = min(int(np.floor(quads[:, :, 1].max())), h - 1)
    if x1 < x0 or y1 < y0:
        return out
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    pix = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)

    # Newton inversion of the forward map, all pixels at once
    s = pix.copy()
    lo = grid.rest[0, 0]
    hi = grid.rest[-1, -1]
    converged = np.zeros(len(pix), dtype=bool)
    active = np.ones(len(pix), dtype=bool)
    for _ in range(_NEWTON_ITERS):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        f, dfu, dfv = _forward_with_jacobian(s[idx], grid)
        r = f - pix[idx]
        done = (np.abs(r) < _NEWTON_TOL).all(axis=1)
        converged[idx[done]] = True
        active[idx[done]] = False
        idx = idx[~done]
        if idx.size == 0:
            break
        r = r[~done]
        dfu = dfu[~done]
        dfv = dfv[~done]
        det = dfu[:, 0] * dfv[:, 1] - dfu[:, 1] * dfv[:, 0]
        bad = np.abs(det) < 1e-12
        det[bad] = 1.0
        step_x = (dfv[:, 1] * r[:, 0] - dfv[:, 0] * r[:, 1]) / det
        step_y = (-dfu[:, 1] * r[:, 0] + dfu[:, 0] * r[:, 1]) / det
        step = np.stack([step_x, step_y], axis=1)
        step[bad] = 0.0
        nrm = np.linalg.norm(step, axis=1, keepdims=True)
        big = nrm[:, 0] > 2.0 * max(grid.cell_size())
        step[big] *= (2.0 * max(grid.cell_size())) / nrm[big]
        s[idx] = np.clip(s[idx] - step, lo, hi)
        active[idx[bad]] = False

    if converged.any():
        sc = s[converged]
        vals = _bilinear_sample(image, sc[:, 0], sc[:, 1])
        if image.dtype == np.uint8:
            vals = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
        else:
            vals = vals.astype(image.dtype)
        out[pix[converged, 1].astype(int), pix[converged, 0].astype(int)] = vals

    # pixels Newton could not resolve: per-cell closed-form fallback (folds,
    # vacated pixels). Vacated pixels that no cell claims keep the source.
    unresolved = ~converged
    if unresolved.any():
        res_mask = np.zeros((h, w), dtype=bool)
        res_mask[pix[unresolved, 1].astype(int), pix[unresolved, 0].astype(int)] = True
        for k in range(len(cx)):
            q = quads[k]
            bx0 = max(int(np.ceil(q[:, 0].min())), 0)
            bx1 = min(int(np.floor(q[:, 0].max())), w - 1)
            by0 = max(int(np.ceil(q[:, 1].min())), 0)
            by1 = min(int(np.floor(q[:, 1].max())), h - 1)
            if bx1 < bx0 or by1 < by0:
                continue
            sub = res_mask[by0:by1 + 1, bx0:bx1 + 1]
            if not sub.any():
                continue
            yy, xx = np.nonzero(sub)
            pts = np.stack([xx + bx0, yy + by0], axis=1).astype(np.float64)
            u, v, err = _invert_bilinear(pts, q[0], q[1], q[2], q[3])
            good = err <= _UV_TOL
            if folded_cells[k]:
                good = np.isfinite(u)  # nearest-valid: clamp to the unit box
            if not good.any():
                continue
            uu = np.clip(u[good], 0.0, 1.0)
            vv = np.clip(v[good], 0.0, 1.0)
            r00 = grid.rest[cy[k], cx[k]]
            sx = r00[0] + uu * (grid.rest[cy[k], cx[k] + 1, 0] - r00[0])
            sy = r00[1] + vv * (grid.rest[cy[k] + 1, cx[k], 1] - r00[1])
            vals = _bilinear_sample(image, sx, sy)
            if image.dtype == np.uint8:
                vals = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
            else:
                vals = vals.astype(image.dtype)
            oy = (yy + by0)[good]
            ox = (xx + bx0)[good]
            out[oy, ox] = vals
            res_mask[oy, ox] = False
    return out
