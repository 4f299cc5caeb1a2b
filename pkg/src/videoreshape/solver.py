"""Damped Gauss-Newton (Levenberg-Marquardt style) least-squares solver.

The solver consumes a callable returning the stacked residual vector and its
Jacobian (dense ndarray or scipy sparse). Damping is multiplied by 10 on a
rejected step and divided by 10 on an accepted one; iteration stops when the
relative energy change of an accepted step falls below `rel_tol` or after
`max_iters` iterations. Accepted steps never increase the energy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_MAX_ITERS = 50
DEFAULT_REL_TOL = 1e-6


class SolverDivergence(RuntimeError):
    """Raised when the energy becomes non-finite."""


@dataclass
class SolveInfo:
    iterations: int = 0
    energies: list = field(default_factory=list)       # energy after each accepted step
    accepted_deltas: list = field(default_factory=list)  # energy decrease per accepted step
    rejected_steps: int = 0
    converged: bool = False

    @property
    def initial_energy(self) -> float:
        return self.energies[0]

    @property
    def final_energy(self) -> float:
        return self.energies[-1]

    @property
    def monotone(self) -> bool:
        return all(d >= 0 for d in self.accepted_deltas)


def _solve_step(J, r, damping: float) -> np.ndarray:
    # Marquardt scaling with a floor relative to the largest diagonal entry:
    # near-flat directions otherwise get near-zero damping and wild steps
    if sp.issparse(J):
        JtJ = (J.T @ J).tocsc()
        g = J.T @ r
        diag = JtJ.diagonal()
        floor = max(1e-6 * diag.max(), 1e-12)
        D = sp.diags(damping * np.maximum(diag, floor))
        return spla.spsolve(JtJ + D, -g)
    JtJ = J.T @ J
    g = J.T @ r
    diag = np.diag(JtJ)
    floor = max(1e-6 * diag.max(), 1e-12)
    diag = np.maximum(diag, floor)
    return np.linalg.solve(JtJ + damping * np.diag(diag), -g)


def solve_least_squares(
    residual_jacobian: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0: np.ndarray,
    max_iters: int = DEFAULT_MAX_ITERS,
    rel_tol: float = DEFAULT_REL_TOL,
    init_damping: float = 1e-3,
) -> tuple[np.ndarray, SolveInfo]:
    x = np.asarray(x0, dtype=np.float64).copy()
    info = SolveInfo()
    r, J = residual_jacobian(x)
    energy = float(r @ r)
    if not np.isfinite(energy):
        raise SolverDivergence("initial energy is not finite")
    info.energies.append(energy)
    damping = init_damping

    for _ in range(max_iters):
        info.iterations += 1
        try:
            step = _solve_step(J, r, damping)
        except Exception:
            damping *= 10.0
            info.rejected_steps += 1
            if damping > 1e14:
                break
            continue
        x_new = x + step
        r_new, J_new = residual_jacobian(x_new)
        energy_new = float(r_new @ r_new)
        if not np.isfinite(energy_new):
            raise SolverDivergence("energy became non-finite")
        if energy_new < energy:
            decrease = energy - energy_new
            x, r, J = x_new, r_new, J_new
            info.energies.append(energy_new)
            info.accepted_deltas.append(decrease)
            damping /= 10.0
            rel = decrease / max(energy, 1e-300)
            energy = energy_new
            if rel < rel_tol:
                info.converged = True
                break
        else:
            damping *= 10.0
            info.rejected_steps += 1
            if damping > 1e14:
                # no descent direction left at any damping: treat as converged
                info.converged = True
                break
    return x, info
