"""Moving-least-squares 2D deformation (similarity flavor by default).

Similarity MLS reproduces global similarity transforms of the handles
exactly, which matches the scaling character of face reshaping. The closed
form below uses the decomposition M(a)M(b)^T = (a.b) I + cross(a, b) J.
"""
from __future__ import annotations

import numpy as np

from .errors import WarpError

MLS_WEIGHT_EPS = 1e-6
_CHUNK = 2048


def _deform_chunk(src: np.ndarray, dst: np.ndarray, pts: np.ndarray,
                  variant: str) -> np.ndarray:
    d2 = ((pts[:, None, :] - src[None, :, :]) ** 2).sum(axis=2)
    w = 1.0 / (d2 + MLS_WEIGHT_EPS)                      # (n, k)
    wsum = w.sum(axis=1, keepdims=True)
    p_star = (w[:, :, None] * src[None]).sum(axis=1) / wsum
    q_star = (w[:, :, None] * dst[None]).sum(axis=1) / wsum
    ph = src[None] - p_star[:, None, :]                  # (n, k, 2)
    qh = dst[None] - q_star[:, None, :]
    d = pts - p_star                                     # (n, 2)
    if variant == "similarity":
        mu = (w * (ph * ph).sum(axis=2)).sum(axis=1)     # (n,)
        dot = (ph * d[:, None, :]).sum(axis=2)           # (n, k)
        crs = ph[:, :, 0] * d[:, None, 1] - ph[:, :, 1] * d[:, None, 0]
        qperp = np.stack([-qh[:, :, 1], qh[:, :, 0]], axis=2)
        acc = (w[:, :, None] * (dot[:, :, None] * qh + crs[:, :, None] * qperp)).sum(axis=1)
        return acc / mu[:, None] + q_star
    if variant == "affine":
        M1 = np.einsum("nk,nka,nkb->nab", w, ph, ph)     # (n, 2, 2)
        M2 = np.einsum("nk,nka,nkb->nab", w, ph, qh)
        sol = np.linalg.solve(M1, M2)
        return np.einsum("na,nab->nb", d, sol) + q_star
    raise ValueError(f"unknown MLS variant {variant!r}")


def mls_deform(handles_src: np.ndarray, handles_dst: np.ndarray, points: np.ndarray,
               variant: str = "similarity") -> np.ndarray:
    """Deform `points` by the MLS interpolation of handle displacements."""
    src = np.asarray(handles_src, dtype=np.float64)
    dst = np.asarray(handles_dst, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(src) < 3:
        raise WarpError(f"MLS needs at least 3 handles, got {len(src)}")
    if np.array_equal(src, dst):
        return pts.copy()  # exact identity (the MLS of zero displacements)
    out = np.empty_like(pts)
    for i0 in range(0, len(pts), _CHUNK):
        out[i0:i0 + _CHUNK] = _deform_chunk(src, dst, pts[i0:i0 + _CHUNK], variant)
    return out
