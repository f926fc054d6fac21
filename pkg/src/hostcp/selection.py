"""Online facility-location selection as a regularized convex program.

Variables, flattened into one vector ``x``::

    z_new  (B x B)   z_new[i, j] = 1 when new point j represents new point i
    z_old  (B x M)   z_old[i, j] = 1 when old point j represents new point i
    u      (B,)      soft indicator that new point j is a representative

Objective ``<z_new, d_new_new> + <z_old, d_new_old> + (eps/2) ||x||^2`` with
every row of ``[z_new z_old]`` summing to one, ``u_j >= z_new[i, j]``,
``sum(u) <= budget`` and all variables in ``[0, 1]``.
"""

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dataset import round_half_up
from .embedder import DistanceBlocks
from .exceptions import ConfigError, ConvergenceError
from .qp import kkt_residuals, solve_qp

__all__ = [
    "SelectionProblem",
    "SelectionSolution",
    "SelectedSet",
    "selection_budget",
    "solve_selection",
    "hard_select",
    "integral_oracle",
    "subset_cost",
    "ACTIVE_THRESHOLD",
]

ACTIVE_THRESHOLD = 1e-7
ORACLE_MAX_NEW = 15
MAX_POLISH_ROUNDS = 20


def selection_budget(gamma, n_new):
    return max(1, round_half_up(gamma * n_new))


@dataclass
class SelectionProblem:
    blocks: DistanceBlocks
    gamma: float = 0.2
    epsilon: float = 1e-2
    xi: float = 0.5
    budget: int = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.xi <= 1.0:
            raise ConfigError(f"xi must lie in (0, 1], got {self.xi}")
        if self.budget is None:
            self.budget = selection_budget(self.gamma, self.blocks.n_new)
        if not 1 <= self.budget <= self.n_new:
            raise ConfigError(f"budget {self.budget} outside [1, {self.n_new}]")

    @property
    def n_new(self):
        return self.blocks.n_new

    @property
    def n_old(self):
        return self.blocks.n_old

    @property
    def n_vars(self):
        B, M = self.n_new, self.n_old
        return B * B + B * M + B

    def linear_cost(self):
        B = self.n_new
        return np.concatenate([self.blocks.d_new_new.ravel(), self.blocks.d_new_old.ravel(), np.zeros(B)])

    @cached_property
    def constraints(self):
        """``(A, b, G, h, kinds)``; ``kinds`` labels every inequality row."""
        return _constraints(self.n_new, self.n_old, self.budget)

    def split(self, x):
        B, M = self.n_new, self.n_old
        z_new = x[:B * B].reshape(B, B)
        z_old = x[B * B:B * B + B * M].reshape(B, M)
        u = x[B * B + B * M:]
        return z_new, z_old, u


def _constraints(B, M, budget):
    n = B * B + B * M + B
    iz = np.arange(B * B).reshape(B, B)
    io = B * B + np.arange(B * M).reshape(B, M)
    iu = B * B + B * M + np.arange(B)

    rows = np.repeat(np.arange(B), B + M)
    cols = np.concatenate([iz, io], axis=1).ravel()
    A = sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(B, n))
    b = np.ones(B)

    # z_new[i, j] - u_j <= 0
    link_rows = np.repeat(np.arange(B * B), 2)
    link_cols = np.stack([iz.ravel(), np.tile(iu, B)], axis=1).ravel()
    link_vals = np.tile([1.0, -1.0], B * B)
    G_link = sp.csr_matrix((link_vals, (link_rows, link_cols)), shape=(B * B, n))
    G_budget = sp.csr_matrix((np.ones(B), (np.zeros(B, dtype=int), iu)), shape=(1, n))
    eye = sp.identity(n, format="csr")
    G = sp.vstack([G_link, G_budget, -eye, eye], format="csr")
    h = np.concatenate([np.zeros(B * B), [float(budget)], np.zeros(n), np.ones(n)])
    kinds = np.array(["link"] * (B * B) + ["budget"] + ["lower"] * n + ["upper"] * n)
    return A, b, G, h, kinds


@dataclass
class SelectionSolution:
    z_new: np.ndarray
    z_old: np.ndarray
    u: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int = 0
    polished: bool = False
    active: np.ndarray = field(default=None, repr=False)

    @property
    def x(self):
        return np.concatenate([self.z_new.ravel(), self.z_old.ravel(), self.u])

    @property
    def column_mass(self):
        return self.z_new.sum(axis=0)

    def linear_objective(self, problem):
        """Objective value without the regularization term."""
        return float(problem.linear_cost() @ self.x)

    def link_duals(self):
        B = self.z_new.shape[0]
        return self.ineq_duals[:B * B].reshape(B, B)

    def budget_dual(self):
        B = self.z_new.shape[0]
        return float(self.ineq_duals[B * B])


@dataclass
class SelectedSet:
    indices: np.ndarray
    column_mass: np.ndarray


def classify_active(slack, dual, threshold=ACTIVE_THRESHOLD):
    """Strongly active inequalities: multiplier dominates slack and is not negligible."""
    return (dual > slack) & (dual > threshold)


def objective_value(problem, x):
    return float(problem.linear_cost() @ x + 0.5 * problem.epsilon * (x @ x))


def residual_of(problem, x, y, z):
    A, b, G, h, _ = problem.constraints
    p = np.full(problem.n_vars, problem.epsilon)
    return max(kkt_residuals(p, problem.linear_cost(), A, b, G, h, x, y, z))


class _SelectionKKT:
    """Newton solves for the selection program by eliminating the z blocks.

    Every z variable couples only to its row's equality and (for ``z_new``)
    to one ``u_j`` through a linking row, so the z block of the Hessian is
    diagonal and the remaining Schur system is ``2B x 2B``.
    """

    def __init__(self, problem, w):
        B, M, eps = problem.n_new, problem.n_old, problem.epsilon
        n = problem.n_vars
        self.B, self.M = B, M
        w_link = w[:B * B].reshape(B, B)
        w_budget = w[B * B]
        base = eps + w[B * B + 1:B * B + 1 + n] + w[B * B + 1 + n:]
        a_zn = base[:B * B].reshape(B, B)
        self.d_zn = a_zn + w_link
        self.d_zo = base[B * B:B * B + B * M].reshape(B, M)
        self.w_link = w_link
        # w - w^2 / (w + a) written without cancellation
        S_uu = np.diag(base[B * B + B * M:] + (w_link * a_zn / self.d_zn).sum(axis=0)) + w_budget
        # coupling of u_j to row i after eliminating z_new[i, j]
        E = (w_link / self.d_zn).T
        T = (1.0 / self.d_zn).sum(axis=1) + (1.0 / self.d_zo).sum(axis=1)
        self.S = np.block([[S_uu, E], [E.T, -np.diag(T)]])

    def solve(self, rx, ry):
        B, M = self.B, self.M
        r_zn = rx[:B * B].reshape(B, B)
        r_zo = rx[B * B:B * B + B * M].reshape(B, M)
        r_u = rx[B * B + B * M:]
        t_zn = r_zn / self.d_zn
        rhs_u = r_u + (self.w_link * t_zn).sum(axis=0)
        rhs_y = ry - t_zn.sum(axis=1) - (r_zo / self.d_zo).sum(axis=1)
        sol = np.linalg.solve(self.S, np.concatenate([rhs_u, rhs_y]))
        du, dy = sol[:B], sol[B:]
        dzn = (r_zn + self.w_link * du[None, :] - dy[:, None]) / self.d_zn
        dzo = (r_zo - dy[:, None]) / self.d_zo
        return np.concatenate([dzn.ravel(), dzo.ravel(), du]), dy


def _active_structure(problem, active):
    """Fixed variables and the equality system (rows over all variables) of an active set."""
    A, b, G, h, kinds = problem.constraints
    lower = active[kinds == "lower"]
    upper = active[kinds == "upper"]
    fixed = lower | upper
    general = np.flatnonzero(((kinds == "link") | (kinds == "budget")) & active)
    C = sp.vstack([A, G[general]], format="csr").toarray()
    d = np.concatenate([b, h[general]])
    return fixed, upper, general, C, d


def polish(problem, active):
    """Exact minimizer of the program restricted to an active set.

    Returns ``None`` when the restricted system is inconsistent.
    """
    fixed, upper, _, C, d = _active_structure(problem, active)
    x = np.where(upper, 1.0, 0.0)
    free = np.flatnonzero(~fixed)
    d = d - C[:, fixed] @ x[fixed]
    C = C[:, free]
    target = -problem.linear_cost()[free] / problem.epsilon
    corr, *_ = np.linalg.lstsq(C, C @ target - d, rcond=None)
    x_free = target - corr
    if np.max(np.abs(C @ x_free - d), initial=0.0) > 1e-9:
        # large |c|/eps loses the constraint to cancellation; split into a
        # feasible point plus a step inside the null space instead
        x0, *_ = np.linalg.lstsq(C, d, rcond=None)
        if np.max(np.abs(C @ x0 - d), initial=0.0) > 1e-9:
            return None
        N = scipy.linalg.null_space(C)
        x_free = x0 + N @ (N.T @ (target - x0))
    # large duals amplify any leftover infeasibility in the complementarity products
    for _ in range(3):
        r = C @ x_free - d
        if np.max(np.abs(r), initial=0.0) <= 1e-15:
            break
        step, *_ = np.linalg.lstsq(C, r, rcond=None)
        x_free = x_free - step
    x[free] = x_free
    return x


def recover_duals(problem, x, active, y0, z0):
    """Multipliers for ``x`` on the given active set, as close as possible to ``(y0, z0)``."""
    A, b, G, h, kinds = problem.constraints
    n, m_eq = problem.n_vars, A.shape[0]
    fixed, upper, general, C, _ = _active_structure(problem, active)
    free = np.flatnonzero(~fixed)
    nu0 = np.concatenate([y0, z0[general]])
    grad = problem.epsilon * x + problem.linear_cost()
    r = (grad + C.T @ nu0)[free]
    dnu, *_ = np.linalg.lstsq(C[:, free].T, -r, rcond=None)
    nu = nu0 + dnu
    z = np.zeros(len(z0))
    z[general] = nu[m_eq:]
    g = grad + C.T @ nu
    lower_rows = np.flatnonzero(kinds == "lower")
    upper_rows = np.flatnonzero(kinds == "upper")
    # -x_i <= 0 enters stationarity with -z, x_i <= 1 with +z
    z[lower_rows[fixed & ~upper]] = g[fixed & ~upper]
    z[upper_rows[upper]] = -g[upper]
    return nu[:m_eq], z


def _active_set_polish(problem, active, y0, z0, tol, max_rounds=MAX_POLISH_ROUNDS):
    """Polish on ``active``, then repair it by adding violated rows and dropping negative multipliers."""
    A, b, G, h, _ = problem.constraints
    p = np.full(problem.n_vars, problem.epsilon)
    q = problem.linear_cost()
    active = active.copy()
    for _ in range(max_rounds):
        x = polish(problem, active)
        if x is None:
            return None
        y, z = recover_duals(problem, x, active, y0, z0)
        residual = max(kkt_residuals(p, q, A, b, G, h, x, y, z))
        if residual <= tol:
            return x, y, z, residual, active
        repaired = (active | (G @ x - h > tol)) & ~(z < -tol)
        if np.array_equal(repaired, active):
            return None
        active = repaired
    return None


def solve_selection(problem, tol=1e-8, max_iter=200):
    """Solve the regularized selection program to KKT residual ``tol``."""
    blocks = problem.blocks
    if not (np.all(np.isfinite(blocks.d_new_new)) and np.all(np.isfinite(blocks.d_new_old))):
        raise ValueError("distances must be finite")
    if np.any(blocks.d_new_new < 0) or np.any(blocks.d_new_old < 0):
        raise ValueError("distances must be nonnegative")
    A, b, G, h, _ = problem.constraints
    p = np.full(problem.n_vars, problem.epsilon)
    q = problem.linear_cost()
    for attempt_tol in (tol, tol * 1e-3):
        res = solve_qp(p, q, A, b, G, h, tol=attempt_tol, max_iter=max_iter,
                       kkt_factory=lambda w: _SelectionKKT(problem, w), strict=False)
        x, y, z, polished = res.x, res.y, res.z, False
        active = classify_active(res.s, res.z)
        found = _active_set_polish(problem, active, res.y, res.z, tol)
        if found is not None:
            x, y, z, residual, active = found
            polished = True
            break
        residual = max(kkt_residuals(p, q, A, b, G, h, x, y, z))
        if residual <= tol:
            active = classify_active(h - G @ x, z)
            break
    else:
        raise ConvergenceError("selection program solved only to KKT residual above tolerance",
                               residual, res.iterations)
    z_new, z_old, u = problem.split(x)
    return SelectionSolution(
        z_new=z_new.copy(), z_old=z_old.copy(), u=u.copy(),
        eq_duals=y, ineq_duals=z,
        objective=objective_value(problem, x), kkt_residual=residual,
        iterations=res.iterations, polished=polished, active=active,
    )


def hard_select(solution, problem):
    mass = solution.column_mass
    candidates = np.flatnonzero(mass >= problem.xi)
    if len(candidates) > problem.budget:
        # mass descending, index ascending on ties
        order = np.lexsort((candidates, -mass[candidates]))
        candidates = candidates[order[:problem.budget]]
    return SelectedSet(np.sort(candidates), mass)


def subset_cost(blocks, subset):
    """Facility-location cost when ``subset`` of new points plus all old points may represent."""
    B = blocks.n_new
    best = np.full(B, np.inf)
    if blocks.n_old:
        best = blocks.d_new_old.min(axis=1)
    subset = list(subset)
    if subset:
        best = np.minimum(best, blocks.d_new_new[:, subset].min(axis=1))
    return float(best.sum())


def integral_oracle(blocks, budget):
    """Exhaustive minimizer of the combinatorial objective over new-point subsets."""
    B = blocks.n_new
    if B > ORACLE_MAX_NEW:
        raise ValueError(f"exhaustive oracle limited to {ORACLE_MAX_NEW} new points, got {B}")
    best_subset, best_cost = None, np.inf
    for size in range(1, min(budget, B) + 1):
        for subset in itertools.combinations(range(B), size):
            cost = subset_cost(blocks, subset)
            if cost < best_cost or (cost == best_cost and subset < best_subset):
                best_subset, best_cost = subset, cost
    return best_subset, best_cost
