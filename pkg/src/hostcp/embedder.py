"""Learned embeddings and the L1 distances fed to the selection program."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .tensor import mlp_backward, mlp_forward

__all__ = ["DistanceBlocks", "embed", "distance_blocks", "distance_backward"]


@dataclass
class DistanceBlocks:
    """Distances among the current minibatch and from it to the old set.

    ``d_new_new`` is ``(B, B)``, ``d_new_old`` is ``(B, M)``.
    """

    d_new_new: np.ndarray
    d_new_old: np.ndarray

    def __post_init__(self):
        self.d_new_new = np.asarray(self.d_new_new, dtype=np.float64)
        B = self.d_new_new.shape[0]
        if self.d_new_new.shape != (B, B):
            raise ShapeError(f"d_new_new must be square, got {self.d_new_new.shape}")
        self.d_new_old = np.asarray(self.d_new_old, dtype=np.float64).reshape(B, -1)

    @property
    def n_new(self):
        return self.d_new_new.shape[0]

    @property
    def n_old(self):
        return self.d_new_old.shape[1]

    @classmethod
    def from_points(cls, new, old=None):
        """Blocks for raw coordinates, i.e. an identity embedding."""
        new = np.asarray(new, dtype=np.float64)
        if new.ndim == 1:
            new = new[:, None]
        if old is None:
            old = np.zeros((0, new.shape[1]))
        old = np.asarray(old, dtype=np.float64).reshape(-1, new.shape[1])
        return distance_blocks(new, old)


def embed(phi, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != phi.in_dim:
        raise ShapeError(f"features of shape {X.shape} do not fit an embedder with input dim {phi.in_dim}")
    return mlp_forward(phi, X)


def _l1(a, b):
    return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)


def distance_blocks(H_new, H_old):
    H_new = np.asarray(H_new, dtype=np.float64)
    H_old = np.asarray(H_old, dtype=np.float64)
    if H_old.size == 0:
        H_old = H_old.reshape(0, H_new.shape[1])
    if H_new.shape[1] != H_old.shape[1]:
        raise ShapeError(f"embedding dims differ: {H_new.shape[1]} vs {H_old.shape[1]}")
    dnn = _l1(H_new, H_new)
    # exact symmetry regardless of rounding in the broadcast
    dnn = np.triu(dnn, 1)
    dnn = dnn + dnn.T
    return DistanceBlocks(dnn, _l1(H_new, H_old))


def _embedding_grads(H_new, H_old, g_nn, g_no):
    """Gradients of ``sum(g * d)`` w.r.t. the embeddings of each block."""
    s_nn = np.sign(H_new[:, None, :] - H_new[None, :, :])
    s_no = np.sign(H_new[:, None, :] - H_old[None, :, :])
    # d_ij depends on h_i with sign(h_i - h_j) and on h_j with the opposite sign
    dH_new = (np.einsum("ij,ijk->ik", g_nn, s_nn) - np.einsum("ij,ijk->jk", g_nn, s_nn)
              + np.einsum("ij,ijk->ik", g_no, s_no))
    dH_old = -np.einsum("ij,ijk->jk", g_no, s_no)
    return dH_new, dH_old


def distance_backward(phi, trace_new, trace_old, dJ_d_new_new, dJ_d_new_old):
    """Gradient w.r.t. ``phi`` of ``sum(dJ_d * d)`` over both distance blocks.

    ``trace_old`` may be ``None`` when the old set is empty.
    """
    H_new = trace_new.pre[-1]
    B = H_new.shape[0]
    g_nn = np.asarray(dJ_d_new_new, dtype=np.float64)
    if g_nn.shape != (B, B):
        raise ShapeError(f"gradient for d_new_new has shape {g_nn.shape}, expected {(B, B)}")
    if trace_old is None:
        H_old = np.zeros((0, H_new.shape[1]))
    else:
        H_old = trace_old.pre[-1]
    g_no = np.asarray(dJ_d_new_old, dtype=np.float64).reshape(B, -1)
    if g_no.shape != (B, H_old.shape[0]):
        raise ShapeError(f"gradient for d_new_old has shape {g_no.shape}, expected {(B, H_old.shape[0])}")
    dH_new, dH_old = _embedding_grads(H_new, H_old, g_nn, g_no)
    grad = mlp_backward(phi, trace_new, dH_new)
    if trace_old is not None and H_old.shape[0]:
        g_old = mlp_backward(phi, trace_old, dH_old)
        grad = type(grad)([a + b for a, b in zip(grad.weights, g_old.weights)],
                          [a + b for a, b in zip(grad.biases, g_old.biases)], grad.activation)
    return grad
