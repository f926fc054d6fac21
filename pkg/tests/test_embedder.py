import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hostcp.embedder import DistanceBlocks, distance_backward, distance_blocks, embed
from hostcp.exceptions import ShapeError
from hostcp.tensor import MlpParams, init_mlp


def _loss(phi, Xn, Xo, Wn, Wo):
    Hn, _ = embed(phi, Xn)
    Ho, _ = embed(phi, Xo)
    blocks = distance_blocks(Hn, Ho)
    return float((Wn * blocks.d_new_new).sum() + (Wo * blocks.d_new_old).sum())


class TestEmbed:
    def test_identity(self, rng):
        X = rng.standard_normal((4, 3))
        H, _ = embed(MlpParams([np.eye(3)], [np.zeros(3)]), X)
        assert np.array_equal(H, X)

    def test_zero_params_collapse(self, rng):
        phi = init_mlp([3, 5, 2], rng).zeros_like()
        H, _ = embed(phi, rng.standard_normal((4, 3)))
        assert not np.any(distance_blocks(H, H[:0]).d_new_new)

    def test_reevaluation(self, rng):
        phi = init_mlp([3, 4, 2], rng, std=1.0)
        X = rng.standard_normal((5, 3))
        H1, _ = embed(phi, X)
        H2, _ = embed(phi.copy(), X.copy())
        assert np.array_equal(H1, H2)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            embed(init_mlp([3, 2], rng), np.ones((2, 2)))


class TestDistances:
    def test_hand_value(self):
        blocks = distance_blocks(np.array([[1.0, 2.0]]), np.array([[3.0, 1.0]]))
        assert blocks.d_new_old[0, 0] == 3.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_metric_properties(self, seed):
        r = np.random.default_rng(seed)
        H = r.standard_normal((6, 3))
        d = distance_blocks(H, H[:0]).d_new_new
        assert np.array_equal(d, d.T)
        assert not np.any(np.diag(d))
        assert np.all(d >= 0)
        i, j, k = r.choice(6, 3, replace=False)
        assert d[i, k] <= d[i, j] + d[j, k] + 1e-12

    def test_from_points_accepts_1d(self):
        blocks = DistanceBlocks.from_points([0.0, 1.0, 10.0])
        assert blocks.d_new_new[0, 2] == 10.0 and blocks.n_old == 0


class TestDistanceBackward:
    def test_zero_upstream(self, rng):
        phi = init_mlp([2, 3, 2], rng)
        X = rng.standard_normal((3, 2))
        _, tn = embed(phi, X)
        g = distance_backward(phi, tn, None, np.zeros((3, 3)), np.zeros((3, 0)))
        assert not np.any(g.flat())

    def test_scalar_sign(self):
        # h = w * x with w = 1: h1 = 2, h2 = 5, d = |h1 - h2|
        phi = MlpParams([np.ones((1, 1))], [np.zeros(1)])
        X = np.array([[2.0], [5.0]])
        _, tn = embed(phi, X)
        W = np.array([[0.0, 1.0], [0.0, 0.0]])
        g = distance_backward(phi, tn, None, W, np.zeros((2, 0)))
        # dd/dw = -1 * x1 + 1 * x2, dd/db = -1 + 1
        assert g.weights[0][0, 0] == pytest.approx(3.0)
        assert g.biases[0][0] == pytest.approx(0.0)

    def test_finite_differences(self, rng):
        phi = init_mlp([3, 5, 4], rng, std=0.8)
        Xn, Xo = rng.standard_normal((4, 3)), rng.standard_normal((3, 3))
        Wn, Wo = rng.standard_normal((4, 4)), rng.standard_normal((4, 3))
        _, tn = embed(phi, Xn)
        _, to = embed(phi, Xo)
        g = distance_backward(phi, tn, to, Wn, Wo).flat()
        flat, h = phi.flat(), 1e-6
        fd = np.array([(_loss(phi.with_flat(flat + h * e), Xn, Xo, Wn, Wo)
                        - _loss(phi.with_flat(flat - h * e), Xn, Xo, Wn, Wo)) / (2 * h)
                       for e in np.eye(flat.size)])
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() <= 1e-5

    def test_shape_mismatch(self, rng):
        phi = init_mlp([2, 2], rng)
        _, tn = embed(phi, rng.standard_normal((3, 2)))
        with pytest.raises(ShapeError):
            distance_backward(phi, tn, None, np.zeros((2, 2)), np.zeros((3, 0)))
