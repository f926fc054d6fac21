"""Small feedforward networks with explicit forward and backward passes.

Everything is float64 numpy. Parameters live in :class:`MlpParams`, which is
also used as the container for gradients of the same shape.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "MlpParams",
    "ForwardTrace",
    "init_mlp",
    "mlp_forward",
    "mlp_backward",
    "softmax_cross_entropy",
    "loss_and_grad",
    "per_sample_grads",
    "axpy_params",
]


@dataclass
class MlpParams:
    """Layered weights and biases. ``weights[k]`` has shape ``(out, in)``."""

    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) == 0:
            raise ShapeError("an MLP needs at least one layer")
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must have the same number of layers")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k}: in-dim {w.shape[1]} != out-dim {self.weights[k - 1].shape[0]} of layer {k - 1}"
                )
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def size(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases], self.activation)

    def copy(self):
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)

    def flat(self):
        """Concatenate all parameters into one vector (layer order, weight then bias)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, vec):
        """Return a copy of ``self`` whose entries are taken from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return MlpParams(weights, biases, self.activation)

    def dot(self, other):
        _check_same_shape(self, other)
        total = 0.0
        for w, b, gw, gb in zip(self.weights, self.biases, other.weights, other.biases):
            total += float(np.sum(w * gw)) + float(np.sum(b * gb))
        return total

    def to_dict(self):
        return {
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["weights"], data["biases"], data.get("activation", "relu"))


@dataclass
class ForwardTrace:
    """Cached layer inputs and pre-activations for one batch.

    ``inputs[k]`` is what layer ``k`` consumed and ``pre[k]`` what it emitted
    before the nonlinearity.
    """

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)

    @property
    def batch_size(self):
        return self.inputs[0].shape[0]


def init_mlp(sizes, rng, std=0.1):
    """Gaussian-initialised MLP with layer widths ``sizes = [in, h1, ..., out]``."""
    if len(sizes) < 2:
        raise ShapeError("sizes must list at least an input and an output width")
    weights = [rng.normal(0.0, std, size=(sizes[k + 1], sizes[k])) for k in range(len(sizes) - 1)]
    biases = [rng.normal(0.0, std, size=sizes[k + 1]) for k in range(len(sizes) - 1)]
    return MlpParams(weights, biases)


def _check_same_shape(a, b):
    if a.n_layers != b.n_layers:
        raise ShapeError(f"layer count {a.n_layers} != {b.n_layers}")
    for k, (wa, wb, ba, bb) in enumerate(zip(a.weights, b.weights, a.biases, b.biases)):
        if wa.shape != wb.shape or ba.shape != bb.shape:
            raise ShapeError(f"layer {k}: shapes {wa.shape}/{ba.shape} vs {wb.shape}/{bb.shape}")


def mlp_forward(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {X.shape}")
    trace = ForwardTrace()
    a = X
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if a.shape[1] != w.shape[1]:
            raise ShapeError(f"layer {k}: input has {a.shape[1]} columns, weight expects {w.shape[1]}")
        z = a @ w.T + b
        trace.inputs.append(a)
        trace.pre.append(z)
        a = z if k == last else np.maximum(z, 0.0)
    return a, trace


def mlp_backward(params, trace, dout):
    """Reverse-mode gradient of ``sum(dout * output)`` with respect to ``params``."""
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != trace.pre[-1].shape:
        raise ShapeError(f"upstream gradient {dout.shape} != output {trace.pre[-1].shape}")
    gw, gb = [None] * params.n_layers, [None] * params.n_layers
    delta = dout
    for k in range(params.n_layers - 1, -1, -1):
        gw[k] = delta.T @ trace.inputs[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            # relu subgradient at 0 is 0
            delta = (delta @ params.weights[k]) * (trace.pre[k - 1] > 0.0)
    return MlpParams(gw, gb, params.activation)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, label):
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(-_log_softmax(logits)[label])


def _check_labels(y, n, n_classes):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"labels have shape {y.shape}, expected ({n},)")
    if n and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y.astype(np.intp)


def batch_losses(logits, y):
    """Per-row cross-entropy and the gradient of each row's loss w.r.t. its logits."""
    y = _check_labels(y, logits.shape[0], logits.shape[1])
    logp = _log_softmax(logits)
    rows = np.arange(len(y))
    losses = -logp[rows, y]
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    return losses, dlogits


def loss_and_grad(params, X, y, weights):
    """Weighted sum of per-example losses and its exact gradient."""
    logits, trace = mlp_forward(params, X)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (logits.shape[0],):
        raise ShapeError(f"weights have shape {weights.shape}, expected ({logits.shape[0]},)")
    if np.any(weights < 0):
        raise ValueError("per-sample weights must be nonnegative")
    losses, dlogits = batch_losses(logits, y)
    loss = float(weights @ losses)
    grad = mlp_backward(params, trace, dlogits * weights[:, None])
    return loss, grad


def per_sample_grads(params, X, y):
    """Gradients of each single-example loss, one :class:`MlpParams` per row."""
    stacked = per_sample_grads_stacked(params, X, y)
    n = stacked[0][0].shape[0]
    return [MlpParams([gw[j] for gw, _ in stacked], [gb[j] for _, gb in stacked], params.activation)
            for j in range(n)]


def per_sample_grads_stacked(params, X, y):
    """Per-example gradients as a list of ``(gW[B, out, in], gb[B, out])`` per layer."""
    logits, trace = mlp_forward(params, X)
    if logits.shape[0] == 0:
        raise ShapeError("per-sample gradients need a nonempty batch")
    _, delta = batch_losses(logits, y)
    out = [None] * params.n_layers
    for k in range(params.n_layers - 1, -1, -1):
        out[k] = (np.einsum("bo,bi->boi", delta, trace.inputs[k]), delta)
        if k > 0:
            delta = (delta @ params.weights[k]) * (trace.pre[k - 1] > 0.0)
    return out


def axpy_params(params, grad, step):
    """``params - step * grad``, elementwise."""
    _check_same_shape(params, grad)
    return MlpParams([w - step * g for w, g in zip(params.weights, grad.weights)],
                     [b - step * g for b, g in zip(params.biases, grad.biases)],
                     params.activation)
