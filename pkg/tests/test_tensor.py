import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hostcp.exceptions import ShapeError
from hostcp.tensor import (MlpParams, axpy_params, batch_losses, init_mlp, loss_and_grad,
                           mlp_forward, per_sample_grads, softmax_cross_entropy)


def _fd_grad(params, f, h=1e-6):
    flat = params.flat()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        out[i] = (f(params.with_flat(flat + e)) - f(params.with_flat(flat - e))) / (2 * h)
    return out


class TestMlpParams:
    def test_rejects_mismatched_layers(self):
        with pytest.raises(ShapeError):
            MlpParams([np.zeros((3, 2)), np.zeros((2, 4))], [np.zeros(3), np.zeros(2)])

    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            MlpParams([], [])

    def test_flat_roundtrip(self, rng):
        p = init_mlp([3, 5, 2], rng)
        q = p.with_flat(p.flat())
        assert np.array_equal(p.flat(), q.flat())
        assert p.size == 3 * 5 + 5 + 5 * 2 + 2

    def test_dict_roundtrip(self, rng):
        p = init_mlp([2, 4, 3], rng)
        assert np.array_equal(MlpParams.from_dict(p.to_dict()).flat(), p.flat())


class TestForward:
    def test_identity_layer(self):
        p = MlpParams([np.eye(2)], [np.zeros(2)])
        out, _ = mlp_forward(p, np.array([[1.0, 2.0]]))
        assert np.array_equal(out, [[1.0, 2.0]])

    def test_zero_weights_give_bias(self):
        b = np.array([0.5, -1.0, 2.0])
        p = MlpParams([np.zeros((3, 4))], [b])
        out, _ = mlp_forward(p, np.ones((5, 4)))
        assert np.array_equal(out, np.tile(b, (5, 1)))

    def test_matches_straight_line_evaluation(self, rng):
        p = init_mlp([3, 4, 2], rng, std=1.0)
        X = rng.standard_normal((6, 3))
        h = np.maximum(X @ p.weights[0].T + p.biases[0], 0.0)
        expected = h @ p.weights[1].T + p.biases[1]
        out, _ = mlp_forward(p, X)
        assert np.allclose(out, expected, rtol=0, atol=1e-14)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            mlp_forward(init_mlp([3, 2], rng), np.ones((2, 4)))


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert softmax_cross_entropy(np.array([0.0, 0.0]), 0) == pytest.approx(math.log(2), abs=1e-15)

    def test_large_logit_is_stable(self):
        loss = softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
        assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-300)

    def test_three_class_value(self):
        expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
        assert softmax_cross_entropy(np.array([1.0, 2.0, 3.0]), 2) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.40761, abs=1e-5)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.array([0.0, 1.0]), 2)


class TestLossAndGrad:
    def test_zero_weights(self, rng):
        p = init_mlp([3, 4, 2], rng)
        loss, grad = loss_and_grad(p, rng.standard_normal((5, 3)), np.zeros(5, dtype=int), np.zeros(5))
        assert loss == 0.0
        assert not np.any(grad.flat())

    def test_uniform_weights_give_mean(self, rng):
        p = init_mlp([3, 4, 2], rng)
        X, y = rng.standard_normal((5, 3)), rng.integers(0, 2, 5)
        loss, _ = loss_and_grad(p, X, y, np.full(5, 0.2))
        losses, _ = batch_losses(mlp_forward(p, X)[0], y)
        assert loss == pytest.approx(losses.mean(), rel=1e-14)

    def test_negative_weight_rejected(self, rng):
        p = init_mlp([2, 2], rng)
        with pytest.raises(ValueError):
            loss_and_grad(p, np.ones((2, 2)), np.zeros(2, dtype=int), np.array([1.0, -1.0]))

    def test_finite_differences(self, rng):
        p = init_mlp([3, 4, 3], rng, std=0.7)
        X, y = rng.standard_normal((4, 3)), rng.integers(0, 3, 4)
        w = rng.uniform(0.1, 1.0, 4)
        _, grad = loss_and_grad(p, X, y, w)
        fd = _fd_grad(p, lambda q: loss_and_grad(q, X, y, w)[0])
        rel = np.abs(grad.flat() - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() <= 1e-5


class TestPerSampleGrads:
    def test_singleton_batch(self, rng):
        p = init_mlp([3, 4, 2], rng)
        X, y = rng.standard_normal((1, 3)), np.array([1])
        _, g = loss_and_grad(p, X, y, np.ones(1))
        assert np.array_equal(per_sample_grads(p, X, y)[0].flat(), g.flat())

    def test_duplicates_match(self, rng):
        p = init_mlp([3, 4, 2], rng)
        x = rng.standard_normal(3)
        gs = per_sample_grads(p, np.stack([x, x]), np.array([0, 0]))
        assert np.array_equal(gs[0].flat(), gs[1].flat())

    def test_mean_equals_batch_gradient(self, rng):
        p = init_mlp([3, 5, 2], rng, std=0.5)
        X, y = rng.standard_normal((7, 3)), rng.integers(0, 2, 7)
        _, g = loss_and_grad(p, X, y, np.full(7, 1 / 7))
        mean = np.mean([q.flat() for q in per_sample_grads(p, X, y)], axis=0)
        assert np.abs(mean - g.flat()).max() <= 1e-12


class TestAxpy:
    def test_step_zero(self, rng):
        p = init_mlp([2, 3, 2], rng)
        g = init_mlp([2, 3, 2], rng)
        assert np.array_equal(axpy_params(p, g, 0.0).flat(), p.flat())

    def test_zero_grad(self, rng):
        p = init_mlp([2, 3, 2], rng)
        assert np.array_equal(axpy_params(p, p.zeros_like(), 0.7).flat(), p.flat())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_step_then_undo(self, seed):
        r = np.random.default_rng(seed)
        # dyadic values keep p - g + g exact
        p = init_mlp([2, 3, 2], r).with_flat(r.integers(-64, 64, 17) / 8.0)
        g = p.with_flat(r.integers(-64, 64, 17) / 8.0)
        back = axpy_params(axpy_params(p, g, 1.0), g, -1.0)
        assert np.array_equal(back.flat(), p.flat())
