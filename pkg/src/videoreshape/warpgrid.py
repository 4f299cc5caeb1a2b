"""Content-aware warping lattice: control-point selection, the linear
bending + regularization optimization with fixed boundary, and the
sparse-control baseline with distortion/similarity terms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import WarpError
from .mls import mls_deform
from .solver import solve_least_squares

log = logging.getLogger(__name__)

FREE, CONTROL, BOUNDARY = 0, 1, 2

W_LINE_BENDING = 1.0
W_REGULARIZATION = 0.8
W_DISTORTION = 0.5
W_SIMILARITY = 0.5
REGION_EXPAND = 1.8


@dataclass
class WarpGrid:
    """rows x cols lattice of 2D positions over the image; `rest` is the
    uniform lattice. Boundary-fixed points always sit at their rest spots."""

    positions: np.ndarray  # (rows, cols, 2)
    rest: np.ndarray       # (rows, cols, 2)
    flags: np.ndarray      # (rows, cols) uint8

    @property
    def rows(self) -> int:
        return self.positions.shape[0]

    @property
    def cols(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "WarpGrid":
        return WarpGrid(self.positions.copy(), self.rest.copy(), self.flags.copy())

    def cell_size(self) -> tuple[float, float]:
        return (self.rest[0, 1, 0] - self.rest[0, 0, 0],
                self.rest[1, 0, 1] - self.rest[0, 0, 1])


def make_grid(rows: int, cols: int, image_size: tuple[int, int]) -> WarpGrid:
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 cols")
    w, h = image_size
    xs = np.linspace(0.0, w - 1.0, cols)
    ys = np.linspace(0.0, h - 1.0, rows)
    rest = np.stack(np.meshgrid(xs, ys), axis=-1)
    return WarpGrid(positions=rest.copy(), rest=rest,
                    flags=np.zeros((rows, cols), dtype=np.uint8))


@dataclass(frozen=True)
class ControlConstraint:
    index: tuple[int, int]  # (row, col)
    target: np.ndarray


@dataclass(frozen=True)
class Region:
    """Inclusive lattice-index box of the area being optimized."""

    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.r1 - self.r0 + 1, self.c1 - self.c0 + 1)

    def contains(self, r: int, c: int) -> bool:
        return self.r0 <= r <= self.r1 and self.c0 <= c <= self.c1

    def is_rim(self, r: int, c: int) -> bool:
        return self.contains(r, c) and (r in (self.r0, self.r1) or c in (self.c0, self.c1))


def full_region(grid: WarpGrid) -> Region:
    return Region(0, grid.rows - 1, 0, grid.cols - 1)


def region_from_points(grid: WarpGrid, points: np.ndarray,
                       expand: float = REGION_EXPAND) -> Region:
    """Face-surrounding sub-lattice: bbox of the points expanded about its
    center, clamped to the image, snapped outward to lattice cells."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 * expand
    lo = center - half
    hi = center + half
    dx, dy = grid.cell_size()
    x0, y0 = grid.rest[0, 0]
    c0 = int(np.clip(np.floor((lo[0] - x0) / dx), 0, grid.cols - 2))
    r0 = int(np.clip(np.floor((lo[1] - y0) / dy), 0, grid.rows - 2))
    c1 = int(np.clip(np.ceil((hi[0] - x0) / dx), c0 + 1, grid.cols - 1))
    r1 = int(np.clip(np.ceil((hi[1] - y0) / dy), r0 + 1, grid.rows - 1))
    return Region(r0, r1, c0, c1)


def nearest_grid_index(grid: WarpGrid, point: np.ndarray) -> tuple[int, int]:
    dx, dy = grid.cell_size()
    x0, y0 = grid.rest[0, 0]
    c = int(np.clip(np.round((point[0] - x0) / dx), 0, grid.cols - 1))
    r = int(np.clip(np.round((point[1] - y0) / dy), 0, grid.rows - 1))
    return r, c


def select_control_points(grid: WarpGrid, silhouette_points: np.ndarray) -> list[tuple[int, int]]:
    """Grid points nearest to the face contour, deduplicated, in scan order."""
    pts = np.atleast_2d(np.asarray(silhouette_points, dtype=np.float64))
    if len(pts) == 0:
        raise WarpError("empty silhouette")
    picked = {nearest_grid_index(grid, p) for p in pts}
    return sorted(picked)


def mls_targets(controls: list[tuple[int, int]], mapping, grid: WarpGrid,
                variant: str = "similarity") -> list[ControlConstraint]:
    """Target position of each control point: MLS of its rest position driven
    by the valid dense-mapping pairs."""
    src, dst = mapping.valid_pairs()
    if len(src) < 3:
        raise WarpError(f"dense mapping has only {len(src)} valid pairs (need >= 3)")
    rest = np.array([grid.rest[r, c] for r, c in controls])
    deformed = mls_deform(src, dst, rest, variant=variant)
    return [ControlConstraint(index=idx, target=deformed[i])
            for i, idx in enumerate(controls)]


# ---------------------------------------------------------------------------
# Lattice energies. E_l and E_r follow the directed double sum over 4-way
# neighborhoods; assembly uses each undirected edge once with a sqrt(2)
# factor, which produces the same normal equations.
# ---------------------------------------------------------------------------

def _region_edges(region: Region) -> np.ndarray:
    """Undirected lattice edges inside the region, as (#, 2, 2) index pairs."""
    rr, cc = region.shape
    edges = []
    for r in range(rr):
        for c in range(cc):
            if c + 1 < cc:
                edges.append(((r, c), (r, c + 1)))
            if r + 1 < rr:
                edges.append(((r, c), (r + 1, c)))
    return np.asarray(edges, dtype=np.int64) + np.array([region.r0, region.c0])


def grid_energies(positions: np.ndarray, rest: np.ndarray, region: Region) -> tuple[float, float]:
    """(E_l, E_r) over the region sub-lattice, directed-sum convention."""
    edges = _region_edges(region)
    vi = positions[edges[:, 0, 0], edges[:, 0, 1]]
    vj = positions[edges[:, 1, 0], edges[:, 1, 1]]
    ri = rest[edges[:, 0, 0], edges[:, 0, 1]]
    rj = rest[edges[:, 1, 0], edges[:, 1, 1]]
    e = ri - rj
    e = e / np.linalg.norm(e, axis=1, keepdims=True)
    d = vi - vj
    cross = d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]
    e_l = 2.0 * float((cross ** 2).sum())
    e_r = 2.0 * float((d ** 2).sum())
    return e_l, e_r


@dataclass
class GridSolveInfo:
    energy_initial: float
    energy_final: float
    free_points: int


def _apply_fixed(grid: WarpGrid, constraints: list[ControlConstraint], region: Region) -> WarpGrid:
    """Pin controls to their targets and the region rim to rest; set flags."""
    out = grid.copy()
    sub = (slice(region.r0, region.r1 + 1), slice(region.c0, region.c1 + 1))
    out.flags[sub] = FREE
    for r in range(region.r0, region.r1 + 1):
        for c in (region.c0, region.c1):
            out.flags[r, c] = BOUNDARY
    for c in range(region.c0, region.c1 + 1):
        for r in (region.r0, region.r1):
            out.flags[r, c] = BOUNDARY
    for con in constraints:
        r, c = con.index
        if not region.contains(r, c):
            raise WarpError(f"control point {con.index} outside optimization region")
        # an explicit constraint re-designates even a rim point as a control
        out.flags[r, c] = CONTROL
        out.positions[r, c] = con.target
    rim = out.flags == BOUNDARY
    out.positions[rim] = out.rest[rim]
    return out


def optimize_grid(grid: WarpGrid, constraints: list[ControlConstraint], region: Region,
                  w_l: float = W_LINE_BENDING, w_r: float = W_REGULARIZATION,
                  ) -> tuple[WarpGrid, GridSolveInfo]:
    """Minimize w_l*E_l + w_r*E_r over the region's free points (sparse linear
    least squares; controls and region rim stay fixed)."""
    pinned = _apply_fixed(grid, constraints, region)
    e_l0, e_r0 = grid_energies(pinned.positions, pinned.rest, region)
    energy0 = w_l * e_l0 + w_r * e_r0

    free_mask = np.zeros((grid.rows, grid.cols), dtype=bool)
    sub = (slice(region.r0, region.r1 + 1), slice(region.c0, region.c1 + 1))
    free_mask[sub] = pinned.flags[sub] == FREE
    free_idx = np.argwhere(free_mask)
    if len(free_idx) == 0:
        return pinned, GridSolveInfo(energy0, energy0, 0)

    fixed = pinned.positions.copy()
    # exact shortcut: if every pinned point sits at rest, the minimizer is the
    # rest lattice itself (E_l = 0 and E_r stationary there)
    pin_mask = np.zeros_like(free_mask)
    pin_mask[sub] = ~free_mask[sub]
    if np.array_equal(fixed[pin_mask], pinned.rest[pin_mask]):
        out = pinned.copy()
        out.positions[free_mask] = out.rest[free_mask]
        e_l1, e_r1 = grid_energies(out.positions, out.rest, region)
        return out, GridSolveInfo(energy0, w_l * e_l1 + w_r * e_r1, len(free_idx))

    unknown_of = -np.ones((grid.rows, grid.cols), dtype=np.int64)
    unknown_of[free_idx[:, 0], free_idx[:, 1]] = np.arange(len(free_idx))

    edges = _region_edges(region)
    rows_i, cols_i, vals, rhs_rows = [], [], [], []
    b_parts = []
    row = 0
    sl = np.sqrt(2.0 * w_l)
    sr = np.sqrt(2.0 * w_r)
    for (pi, pj) in edges:
        i = tuple(pi)
        j = tuple(pj)
        e = pinned.rest[i] - pinned.rest[j]
        e = e / np.linalg.norm(e)
        ui, uj = unknown_of[i], unknown_of[j]
        if ui < 0 and uj < 0:
            continue
        # E_l row: cross(v_i - v_j, e) = (vix - vjx) e_y - (viy - vjy) e_x
        coeffs = [(i, ui, 0, sl * e[1]), (i, ui, 1, -sl * e[0]),
                  (j, uj, 0, -sl * e[1]), (j, uj, 1, sl * e[0])]
        b = 0.0
        for (pt, u, axis, coef) in coeffs:
            if u >= 0:
                rows_i.append(row)
                cols_i.append(2 * u + axis)
                vals.append(coef)
            else:
                b -= coef * fixed[pt][axis]
        b_parts.append(b)
        row += 1
        # E_r rows: v_i - v_j, per axis
        for axis in range(2):
            b = 0.0
            for (pt, u, sign) in ((i, ui, 1.0), (j, uj, -1.0)):
                if u >= 0:
                    rows_i.append(row)
                    cols_i.append(2 * u + axis)
                    vals.append(sr * sign)
                else:
                    b -= sr * sign * fixed[pt][axis]
            b_parts.append(b)
            row += 1

    A = sp.csr_matrix((vals, (rows_i, cols_i)), shape=(row, 2 * len(free_idx)))
    b = np.asarray(b_parts)
    AtA = (A.T @ A).tocsc()
    x = spla.spsolve(AtA, A.T @ b)

    out = pinned.copy()
    out.positions[free_idx[:, 0], free_idx[:, 1]] = x.reshape(-1, 2)
    e_l1, e_r1 = grid_energies(out.positions, out.rest, region)
    return out, GridSolveInfo(energy0, w_l * e_l1 + w_r * e_r1, len(free_idx))


# ---------------------------------------------------------------------------
# Sparse-control baseline: distortion (singular values) + similarity terms.
# ---------------------------------------------------------------------------

def _region_triangles(region: Region) -> np.ndarray:
    """Each lattice quad split along the (r, c) -> (r+1, c+1) diagonal.
    Returns (#tri, 3, 2) lattice indices (v0, v1, v2)."""
    tris = []
    for r in range(region.r0, region.r1):
        for c in range(region.c0, region.c1):
            v00, v10 = (r, c), (r, c + 1)
            v01, v11 = (r + 1, c), (r + 1, c + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return np.asarray(tris, dtype=np.int64)


def _tri_positions(positions: np.ndarray, tris: np.ndarray) -> np.ndarray:
    return positions[tris[:, :, 0], tris[:, :, 1]]  # (#tri, 3, 2)


def _deformation_singular_values(rest_tri: np.ndarray, def_tri: np.ndarray
                                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Largest/smallest singular values of each triangle's deformation matrix
    plus a validity mask (False for degenerate rest triangles)."""
    e1 = rest_tri[:, 1] - rest_tri[:, 0]
    e2 = rest_tri[:, 2] - rest_tri[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ok = np.abs(det) > 1e-12
    if not ok.all():
        log.warning("excluding %d degenerate rest triangles", int((~ok).sum()))
    d1 = def_tri[:, 1] - def_tri[:, 0]
    d2 = def_tri[:, 2] - def_tri[:, 0]
    safe_det = np.where(ok, det, 1.0)
    # J = [d1 d2] @ inv([e1 e2]) with columns as edge vectors
    inv00 = e2[:, 1] / safe_det
    inv01 = -e2[:, 0] / safe_det
    inv10 = -e1[:, 1] / safe_det
    inv11 = e1[:, 0] / safe_det
    a = d1[:, 0] * inv00 + d2[:, 0] * inv10
    b = d1[:, 0] * inv01 + d2[:, 0] * inv11
    c = d1[:, 1] * inv00 + d2[:, 1] * inv10
    d = d1[:, 1] * inv01 + d2[:, 1] * inv11
    E = (a + d) / 2.0
    F = (a - d) / 2.0
    G = (c + b) / 2.0
    H = (c - b) / 2.0
    Q = np.sqrt(E * E + H * H)
    R = np.sqrt(F * F + G * G)
    return Q + R, np.abs(Q - R), ok


def sparse_mode_energies(grid: WarpGrid, region: Region | None = None) -> tuple[float, float]:
    """(E_d, E_s) of the triangulated lattice's current deformation."""
    if region is None:
        region = full_region(grid)
    tris = _region_triangles(region)
    rest_tri = _tri_positions(grid.rest, tris)
    def_tri = _tri_positions(grid.positions, tris)
    big, small, ok = _deformation_singular_values(rest_tri, def_tri)
    e_d = float((big[ok] + np.sqrt(0.5 * (big[ok] ** 2 + small[ok] ** 2))).sum())

    # E_s: (v0' - v1') - (|v0 - v1| / |v2 - v1|) R_theta (v2' - v1')
    r0, r1, r2 = rest_tri[:, 0], rest_tri[:, 1], rest_tri[:, 2]
    d0, d1, d2 = def_tri[:, 0], def_tri[:, 1], def_tri[:, 2]
    a_vec = r2 - r1
    b_vec = r0 - r1
    na = np.linalg.norm(a_vec, axis=1)
    nb = np.linalg.norm(b_vec, axis=1)
    cos_t = (a_vec * b_vec).sum(axis=1) / (na * nb)
    sin_t = (a_vec[:, 0] * b_vec[:, 1] - a_vec[:, 1] * b_vec[:, 0]) / (na * nb)
    ratio = nb / na
    u = d2 - d1
    rot = np.stack([cos_t * u[:, 0] - sin_t * u[:, 1],
                    sin_t * u[:, 0] + cos_t * u[:, 1]], axis=1)
    res = (d0 - d1) - ratio[:, None] * rot
    e_s = float((res[ok] ** 2).sum())
    return e_d, e_s


def _distortion_residual_jacobian(rest_tri, tris, unknown_of, fixed, x, n_unknowns, w_d):
    """sqrt(E_d) residual per triangle with analytic sparse Jacobian."""
    positions = fixed.copy()
    rows_idx = tris[:, :, 0]
    cols_idx = tris[:, :, 1]
    u_all = unknown_of[rows_idx, cols_idx]  # (#tri, 3)
    if n_unknowns:
        grid_pts = x.reshape(-1, 2)
        mask = unknown_of >= 0
        positions[mask] = grid_pts[unknown_of[mask]]
    def_tri = positions[rows_idx, cols_idx]

    e1 = rest_tri[:, 1] - rest_tri[:, 0]
    e2 = rest_tri[:, 2] - rest_tri[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ok = np.abs(det) > 1e-12
    safe_det = np.where(ok, det, 1.0)
    inv = np.empty((len(tris), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / safe_det
    inv[:, 0, 1] = -e2[:, 0] / safe_det
    inv[:, 1, 0] = -e1[:, 1] / safe_det
    inv[:, 1, 1] = e1[:, 0] / safe_det

    d1 = def_tri[:, 1] - def_tri[:, 0]
    d2 = def_tri[:, 2] - def_tri[:, 0]
    a = d1[:, 0] * inv[:, 0, 0] + d2[:, 0] * inv[:, 1, 0]
    b = d1[:, 0] * inv[:, 0, 1] + d2[:, 0] * inv[:, 1, 1]
    c = d1[:, 1] * inv[:, 0, 0] + d2[:, 1] * inv[:, 1, 0]
    d = d1[:, 1] * inv[:, 0, 1] + d2[:, 1] * inv[:, 1, 1]
    E = (a + d) / 2.0
    F = (a - d) / 2.0
    G = (c + b) / 2.0
    H = (c - b) / 2.0
    Q = np.sqrt(np.maximum(E * E + H * H, 1e-300))
    R = np.sqrt(np.maximum(F * F + G * G, 1e-300))
    gam_sign = np.where(Q >= R, 1.0, -1.0)
    big = Q + R
    small = np.abs(Q - R)
    S = np.sqrt(np.maximum(0.5 * (big ** 2 + small ** 2), 1e-300))
    ed = big + S
    r_val = np.sqrt(np.maximum(w_d * ed, 1e-300))

    # chain: d(ed) = (1 + big/(2S)) dGamma + (small/(2S)) dgamma
    dd_big = 1.0 + big / (2.0 * S)
    dd_small = small / (2.0 * S)
    dQ = dd_big + dd_small * gam_sign
    dR = dd_big - dd_small * gam_sign
    dE = dQ * E / Q
    dH = dQ * H / Q
    dF = dR * F / R
    dG = dR * G / R
    da = 0.5 * (dE + dF)
    dd_ = 0.5 * (dE - dF)
    dc = 0.5 * (dG + dH)
    db = 0.5 * (dG - dH)
    scale = 1.0 / (2.0 * r_val) * w_d

    # a,b,c,d are linear in the deformed coords through inv
    rows_j, cols_j, vals_j = [], [], []
    tri_ids = np.nonzero(ok)[0]
    res_rows = np.zeros(len(tris))
    res_rows[ok] = r_val[ok]
    for t in tri_ids:
        # d(d1)/dp1 = I, d(d1)/dp0 = -I; d(d2)/dp2 = I, d(d2)/dp0 = -I
        # coefficient of x-coordinates on (a, b); of y-coordinates on (c, d)
        ga = np.array([da[t], db[t], dc[t], dd_[t]]) * scale[t]
        # contributions per corner/axis
        contrib = {
            (1, 0): ga[0] * inv[t, 0, 0] + ga[1] * inv[t, 0, 1],
            (2, 0): ga[0] * inv[t, 1, 0] + ga[1] * inv[t, 1, 1],
            (1, 1): ga[2] * inv[t, 0, 0] + ga[3] * inv[t, 0, 1],
            (2, 1): ga[2] * inv[t, 1, 0] + ga[3] * inv[t, 1, 1],
        }
        contrib[(0, 0)] = -contrib[(1, 0)] - contrib[(2, 0)]
        contrib[(0, 1)] = -contrib[(1, 1)] - contrib[(2, 1)]
        for (corner, axis), val in contrib.items():
            u = u_all[t, corner]
            if u >= 0:
                rows_j.append(t)
                cols_j.append(2 * u + axis)
                vals_j.append(val)
    J = sp.csr_matrix((vals_j, (rows_j, cols_j)), shape=(len(tris), 2 * n_unknowns))
    return res_rows, J, ok


def optimize_grid_sparse_mode(grid: WarpGrid, constraints: list[ControlConstraint],
                              region: Region,
                              w_l: float = W_LINE_BENDING, w_r: float = W_REGULARIZATION,
                              w_d: float = W_DISTORTION, w_s: float = W_SIMILARITY,
                              ) -> tuple[WarpGrid, dict]:
    """Two-step baseline: the linear solve first, then damped nonlinear
    minimization of w_l*E_l + w_r*E_r + w_d*E_d + w_s*E_s."""
    step1, info1 = optimize_grid(grid, constraints, region, w_l=w_l, w_r=w_r)

    free_mask = np.zeros((grid.rows, grid.cols), dtype=bool)
    sub = (slice(region.r0, region.r1 + 1), slice(region.c0, region.c1 + 1))
    free_mask[sub] = step1.flags[sub] == FREE
    free_idx = np.argwhere(free_mask)
    if len(free_idx) == 0:
        e_d, e_s = sparse_mode_energies(step1, region)
        total = info1.energy_final + w_d * e_d + w_s * e_s
        return step1, {"step1": info1, "energy_step1": total, "energy_step2": total}

    unknown_of = -np.ones((grid.rows, grid.cols), dtype=np.int64)
    unknown_of[free_idx[:, 0], free_idx[:, 1]] = np.arange(len(free_idx))
    n_unknowns = len(free_idx)
    fixed = step1.positions.copy()

    tris = _region_triangles(region)
    rest_tri = _tri_positions(grid.rest, tris)

    # constant-Jacobian rows: E_l, E_r (per edge) and E_s (per triangle)
    edges = _region_edges(region)
    rows_i, cols_i, vals, b_rows = [], [], [], []
    row = 0
    sl = np.sqrt(2.0 * w_l)
    sr = np.sqrt(2.0 * w_r)

    def add_entry(pt, axis, coef, brow):
        u = unknown_of[pt]
        if u >= 0:
            rows_i.append(row)
            cols_i.append(2 * u + axis)
            vals.append(coef)
            return brow
        return brow - coef * fixed[pt][axis]

    for (pi, pj) in edges:
        i, j = tuple(pi), tuple(pj)
        e = grid.rest[i] - grid.rest[j]
        e = e / np.linalg.norm(e)
        b = 0.0
        b = add_entry(i, 0, sl * e[1], b)
        b = add_entry(i, 1, -sl * e[0], b)
        b = add_entry(j, 0, -sl * e[1], b)
        b = add_entry(j, 1, sl * e[0], b)
        b_rows.append(b)
        row += 1
        for axis in range(2):
            b = 0.0
            b = add_entry(i, axis, sr, b)
            b = add_entry(j, axis, -sr, b)
            b_rows.append(b)
            row += 1

    # E_s rows: (v0' - v1') - ratio * R_theta (v2' - v1'), linear in positions
    r0_, r1_, r2_ = rest_tri[:, 0], rest_tri[:, 1], rest_tri[:, 2]
    a_vec = r2_ - r1_
    b_vec = r0_ - r1_
    na = np.linalg.norm(a_vec, axis=1)
    nb = np.linalg.norm(b_vec, axis=1)
    cos_t = (a_vec * b_vec).sum(axis=1) / (na * nb)
    sin_t = (a_vec[:, 0] * b_vec[:, 1] - a_vec[:, 1] * b_vec[:, 0]) / (na * nb)
    ratio = nb / na
    ss = np.sqrt(w_s)
    for t in range(len(tris)):
        p0 = tuple(tris[t, 0])
        p1 = tuple(tris[t, 1])
        p2 = tuple(tris[t, 2])
        k_cos = ratio[t] * cos_t[t]
        k_sin = ratio[t] * sin_t[t]
        # x row: v0x - v1x - k_cos (v2x - v1x) + k_sin (v2y - v1y)
        b = 0.0
        b = add_entry(p0, 0, ss, b)
        b = add_entry(p1, 0, -ss * (1.0 - k_cos), b)
        b = add_entry(p2, 0, -ss * k_cos, b)
        b = add_entry(p1, 1, -ss * k_sin, b)
        b = add_entry(p2, 1, ss * k_sin, b)
        b_rows.append(b)
        row += 1
        # y row: v0y - v1y - k_sin (v2x - v1x) - k_cos (v2y - v1y)
        b = 0.0
        b = add_entry(p0, 1, ss, b)
        b = add_entry(p1, 1, -ss * (1.0 - k_cos), b)
        b = add_entry(p2, 1, -ss * k_cos, b)
        b = add_entry(p1, 0, ss * k_sin, b)
        b = add_entry(p2, 0, -ss * k_sin, b)
        b_rows.append(b)
        row += 1

    A_lin = sp.csr_matrix((vals, (rows_i, cols_i)), shape=(row, 2 * n_unknowns))
    b_lin = np.asarray(b_rows)

    def residual_jacobian(x):
        r_lin = A_lin @ x - b_lin
        r_d, J_d, _ = _distortion_residual_jacobian(
            rest_tri, tris, unknown_of, fixed, x, n_unknowns, w_d)
        return np.concatenate([r_lin, r_d]), sp.vstack([A_lin, J_d]).tocsr()

    x0 = step1.positions[free_idx[:, 0], free_idx[:, 1]].reshape(-1)
    e_d1, e_s1 = sparse_mode_energies(step1, region)
    energy_step1 = info1.energy_final + w_d * e_d1 + w_s * e_s1
    x, sinfo = solve_least_squares(residual_jacobian, x0)

    out = step1.copy()
    out.positions[free_idx[:, 0], free_idx[:, 1]] = x.reshape(-1, 2)
    e_l2, e_r2 = grid_energies(out.positions, out.rest, region)
    e_d2, e_s2 = sparse_mode_energies(out, region)
    energy_step2 = w_l * e_l2 + w_r * e_r2 + w_d * e_d2 + w_s * e_s2
    return out, {"step1": info1, "solver": sinfo,
                 "energy_step1": energy_step1, "energy_step2": energy_step2}
