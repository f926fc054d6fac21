"""Backward pass of the selection program by implicit differentiation.

At a solution with a fixed active set the program reduces to

    minimize  c' x + (eps/2) ||x||^2   subject to  C x = d

where ``C`` stacks the row-sum equalities and the strongly active linking,
budget and bound constraints. Its minimizer is ``x = P(-c/eps) + const`` with
``P`` the orthogonal projector onto ``null(C)``, so ``dx/dc = -P/eps``. Active
bounds pin their variables, which leaves a projector over the free variables
only. ``P`` is symmetric, so one least-squares solve gives the adjoint.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateKKTError, ShapeError, StaleSolutionError
from .selection import _active_structure, residual_of

__all__ = ["SelectionGradient", "differentiate_selection", "selection_jvp"]

STALE_TOLERANCE = 1e-8


@dataclass
class SelectionGradient:
    dJ_d_new_new: np.ndarray
    dJ_d_new_old: np.ndarray


def _free_system(problem, solution):
    if solution.z_new.shape != (problem.n_new, problem.n_new) or solution.z_old.shape != (problem.n_new, problem.n_old):
        raise ShapeError("solution does not belong to this problem")
    residual = residual_of(problem, solution.x, solution.eq_duals, solution.ineq_duals)
    if residual > STALE_TOLERANCE:
        raise StaleSolutionError(f"KKT residual {residual:.3e} exceeds {STALE_TOLERANCE:.0e}; re-solve first")
    fixed, _, general, C, _ = _active_structure(problem, solution.active)
    free = np.flatnonzero(~fixed)
    C = C[:, free]
    C = C[np.any(C != 0.0, axis=1)]
    return free, C, general


def _project_null(C, v, general):
    """Component of ``v`` in the null space of ``C``."""
    if C.shape[0] == 0:
        return v
    coef, *_ = np.linalg.lstsq(C.T, v, rcond=None)
    out = v - C.T @ coef
    if not np.all(np.isfinite(out)):
        raise DegenerateKKTError("null-space projection of the active constraint set failed",
                                 constraints=general)
    return out


def differentiate_selection(problem, solution, dJ_du, dJ_dz_new=None):
    """Gradient of a scalar loss ``J(u, z_new)`` with respect to both distance blocks."""
    B, M = problem.n_new, problem.n_old
    dJ_du = np.asarray(dJ_du, dtype=np.float64)
    if dJ_du.shape != (B,):
        raise ShapeError(f"dJ_du has shape {dJ_du.shape}, expected ({B},)")
    if dJ_dz_new is None:
        dJ_dz_new = np.zeros((B, B))
    dJ_dz_new = np.asarray(dJ_dz_new, dtype=np.float64)
    if dJ_dz_new.shape != (B, B):
        raise ShapeError(f"dJ_dz_new has shape {dJ_dz_new.shape}, expected {(B, B)}")

    upstream = np.concatenate([dJ_dz_new.ravel(), np.zeros(B * M), dJ_du])
    grad_c = np.zeros(problem.n_vars)
    if np.any(upstream):
        free, C, general = _free_system(problem, solution)
        grad_c[free] = -_project_null(C, upstream[free], general) / problem.epsilon
    return SelectionGradient(grad_c[:B * B].reshape(B, B).copy(),
                             grad_c[B * B:B * B + B * M].reshape(B, M).copy())


def selection_jvp(problem, solution, dd_new_new, dd_new_old=None):
    """Forward-mode sensitivity ``(du, dz_new, dz_old)`` for a perturbation of the distances."""
    B, M = problem.n_new, problem.n_old
    if dd_new_old is None:
        dd_new_old = np.zeros((B, M))
    dc = np.concatenate([np.asarray(dd_new_new, dtype=np.float64).ravel(),
                         np.asarray(dd_new_old, dtype=np.float64).ravel(), np.zeros(B)])
    free, C, general = _free_system(problem, solution)
    dx = np.zeros(problem.n_vars)
    dx[free] = -_project_null(C, dc[free], general) / problem.epsilon
    z_new, z_old, u = problem.split(dx)
    return u, z_new, z_old
