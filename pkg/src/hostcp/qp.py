"""Primal-dual interior-point solver for convex QPs with a diagonal Hessian.

Solves::

    minimize    0.5 * x' diag(p) x + q' x
    subject to  A x = b,  G x <= h

with Mehrotra predictor-corrector steps. ``A`` and ``G`` may be dense or
scipy.sparse matrices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConvergenceError

__all__ = ["QPResult", "solve_qp", "kkt_residuals"]


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z: np.ndarray  # inequality multipliers
    s: np.ndarray  # inequality slacks
    iterations: int
    residual: float


def kkt_residuals(p, q, A, b, G, h, x, y, z, s=None):
    """Primal, dual and complementarity residuals (infinity norms).

    When ``s`` is omitted the true slack ``h - G x`` is used and any
    violation of ``G x <= h`` counts as primal infeasibility.
    """
    r_dual = p * x + q + A.T @ y + G.T @ z
    r_eq = A @ x - b
    if s is None:
        s = h - G @ x
        r_ineq = np.maximum(-s, 0.0)
    else:
        r_ineq = G @ x + s - h
    primal = max(_inf(r_eq), _inf(r_ineq))
    comp = _inf(s * z)
    dual = max(_inf(r_dual), _inf(np.minimum(z, 0.0)))
    return primal, dual, comp


def _inf(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


class _KKTSystem:
    """Sparse LU factorization of ``[[diag(p) + G' W G, A'], [A, -reg I]]``."""

    def __init__(self, p, A, G, w, reg=1e-13):
        n, m_eq = len(p), A.shape[0]
        H = sp.diags(p) + G.T @ sp.diags(w) @ G
        K = sp.bmat([[H, A.T], [A, -reg * sp.identity(m_eq)]], format="csc")
        self.n = n
        self.K = K
        self.lu = spla.splu(K)

    def solve(self, rx, ry):
        rhs = np.concatenate([rx, ry])
        sol = self.lu.solve(rhs)
        # one step of iterative refinement removes the bias from ``reg``
        sol += self.lu.solve(rhs - self.K @ sol)
        return sol[:self.n], sol[self.n:]


def solve_qp(p, q, A, b, G, h, tol=1e-8, max_iter=200, kkt_factory=None, strict=True):
    """Solve the QP; ``kkt_factory(w)`` may supply a structure-aware Newton solver.

    The factory must return an object whose ``solve(rx, ry)`` solves
    ``[[diag(p) + G' diag(w) G, A'], [A, 0]] [dx; dy] = [rx; ry]``.
    With ``strict=False`` the best iterate is returned even when it misses
    ``tol``.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    A = sp.csr_matrix(A)
    G = sp.csr_matrix(G)
    b = np.asarray(b, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    m = G.shape[0]
    if kkt_factory is None:
        def kkt_factory(w):
            return _KKTSystem(p, A, G, w)

    # starting point: least-squares fit of the constraints with unit scaling
    kkt = kkt_factory(np.ones(m))
    x, _ = kkt.solve(-q + G.T @ h, b)
    s = h - G @ x
    if m and s.min() < 1.0:
        s = s + (1.0 - s.min())
    z = np.ones(m)
    y = np.zeros(A.shape[0])

    best = None
    stalled = 0
    residual = np.inf
    for it in range(max_iter + 1):
        r_d = p * x + q + A.T @ y + G.T @ z
        r_p = A @ x - b
        r_g = G @ x + s - h
        mu = float(s @ z) / m if m else 0.0
        # duality gap enters as the mean complementarity product
        residual = max(_inf(r_d), _inf(r_p), _inf(r_g), mu)
        if not np.isfinite(residual):
            break
        if best is None or residual < best.residual:
            best = QPResult(x, y, z, s, it, residual)
            stalled = 0
        elif best.residual < 1e3 * tol:
            # only rounding noise is left to fight once this close
            stalled += 1
        if residual <= tol or stalled >= 5 or it == max_iter:
            break

        w = z / s
        kkt = kkt_factory(w)

        def newton(r_c):
            corr = (z * r_g - r_c) / s
            rx, ry = -r_d - G.T @ corr, -r_p
            dx, dy = kkt.solve(rx, ry)
            # one round of iterative refinement against the unfactored operator
            ex = rx - (p * dx + G.T @ (w * (G @ dx)) + A.T @ dy)
            ey = ry - A @ dx
            cx, cy = kkt.solve(ex, ey)
            dx, dy = dx + cx, dy + cy
            dz = corr + w * (G @ dx)
            ds = -r_g - G @ dx
            return dx, dy, dz, ds

        with np.errstate(over="ignore", invalid="ignore"):
            # predictor
            dx, dy, dz, ds = newton(s * z)
            a = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + a * ds) @ (z + a * dz)) / m if m else 0.0
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            dx, dy, dz, ds = newton(s * z + ds * dz - sigma * mu)
        if not all(np.all(np.isfinite(v)) for v in (dx, dy, dz, ds)):
            break
        a = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + a * dx
        y = y + a * dy
        z = z + a * dz
        s = s + a * ds
    if best is not None and (best.residual <= tol or not strict):
        return best
    raise ConvergenceError("interior-point method did not converge",
                           best.residual if best is not None else residual, max_iter)
