import numpy as np
import pytest

from hostcp.difflayer import differentiate_selection, selection_jvp
from hostcp.embedder import DistanceBlocks
from hostcp.exceptions import ShapeError, StaleSolutionError
from hostcp.selection import SelectionProblem, solve_selection


def _problem(rng, B=5, M=0, eps=1e-2):
    pts = rng.standard_normal((B + M, 2))
    return SelectionProblem(DistanceBlocks.from_points(pts[:B], pts[B:]), gamma=0.4, epsilon=eps)


class TestDifferentiate:
    def test_zero_upstream(self, rng):
        problem = _problem(rng)
        sol = solve_selection(problem)
        g = differentiate_selection(problem, sol, np.zeros(5))
        assert not np.any(g.dJ_d_new_new) and not np.any(g.dJ_d_new_old)

    def test_pinned_single_point(self):
        problem = SelectionProblem(DistanceBlocks.from_points([0.0]), gamma=1.0)
        sol = solve_selection(problem)
        g = differentiate_selection(problem, sol, np.ones(1), np.ones((1, 1)))
        assert not np.any(g.dJ_d_new_new)

    def test_adjoint_matches_forward_mode(self, rng):
        problem = _problem(rng, B=6, M=3)
        sol = solve_selection(problem)
        w_u, w_z = rng.standard_normal(6), rng.standard_normal((6, 6))
        d_nn, d_no = rng.standard_normal((6, 6)), rng.standard_normal((6, 3))
        g = differentiate_selection(problem, sol, w_u, w_z)
        du, dz, _ = selection_jvp(problem, sol, d_nn, d_no)
        lhs = (g.dJ_d_new_new * d_nn).sum() + (g.dJ_d_new_old * d_no).sum()
        assert lhs == pytest.approx(w_u @ du + (w_z * dz).sum(), rel=1e-8, abs=1e-10)

    def test_finite_differences_with_old_set(self, rng):
        problem = _problem(rng, B=5, M=3)
        sol = solve_selection(problem)
        w = rng.standard_normal(5)
        g = differentiate_selection(problem, sol, w)
        h = 1e-5
        for i, j in [(0, 1), (2, 0), (4, 2)]:
            plus, minus = problem.blocks.d_new_old.copy(), problem.blocks.d_new_old.copy()
            plus[i, j] += h
            minus[i, j] -= h
            f = [w @ solve_selection(SelectionProblem(DistanceBlocks(problem.blocks.d_new_new, m),
                                                      budget=problem.budget, epsilon=problem.epsilon)).u
                 for m in (plus, minus)]
            assert g.dJ_d_new_old[i, j] == pytest.approx((f[0] - f[1]) / (2 * h), rel=1e-4, abs=1e-7)

    def test_shape_checks(self, rng):
        problem = _problem(rng)
        sol = solve_selection(problem)
        with pytest.raises(ShapeError):
            differentiate_selection(problem, sol, np.ones(4))

    def test_stale_solution(self, rng):
        problem = _problem(rng)
        sol = solve_selection(problem)
        other = _problem(np.random.default_rng(99))
        with pytest.raises(StaleSolutionError):
            differentiate_selection(other, sol, np.ones(5))
