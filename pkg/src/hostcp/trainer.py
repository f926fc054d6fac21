"""Joint online training of the predictor and the selection embedder.

Each step embeds the current minibatch and the old set, solves the selection
program, updates the predictor on the softly selected examples, and moves the
embedder along the gradient of the test loss after a one-step lookahead.
"""

import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import make_minibatches, round_half_up
from .difflayer import differentiate_selection
from .embedder import distance_backward, distance_blocks, embed
from .exceptions import ConfigError, NumericalError
from .selection import SelectionProblem, hard_select, selection_budget, solve_selection
from .tensor import (
    MlpParams,
    axpy_params,
    batch_losses,
    init_mlp,
    loss_and_grad,
    mlp_forward,
    per_sample_grads_stacked,
)

__all__ = [
    "TrainerConfig",
    "OldSet",
    "StepRecord",
    "TrainLog",
    "TrainState",
    "StepArtifacts",
    "selected_loss",
    "lookahead",
    "value",
    "value_grad_phi",
    "init_state",
    "train_step",
    "run",
    "value_ranking",
    "extract_selection",
    "reverse_selection",
]


@dataclass
class TrainerConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.2
    xi: float = 0.5
    epsilon: float = 1e-2
    epochs: int = 5
    k: int = 40
    old_cap: int = 20
    seed: int = 0
    predictor_arch: list = field(default_factory=lambda: [32, 32])
    embedder_arch: list = field(default_factory=lambda: [16, 8])

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta >= 0):
            raise ConfigError("alpha must be positive and beta nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.xi <= 1.0:
            raise ConfigError(f"xi must lie in (0, 1], got {self.xi}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.epochs < 0 or self.k < 1 or self.old_cap < 0:
            raise ConfigError("epochs >= 0, k >= 1 and old_cap >= 0 are required")
        if not self.embedder_arch:
            raise ConfigError("embedder_arch needs at least the embedding width")
        self.predictor_arch = [int(w) for w in self.predictor_arch]
        self.embedder_arch = [int(w) for w in self.embedder_arch]

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown trainer config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


class OldSet:
    """Previously selected points, capped at ``capacity`` rows."""

    def __init__(self, capacity, dim):
        self.capacity = capacity
        self.rows = np.zeros((0, dim))
        self.source_ids = np.zeros(0, dtype=np.int64)
        self._stamp = np.zeros(0, dtype=np.int64)
        self._clock = 0

    def __len__(self):
        return len(self.source_ids)

    def excluding(self, ids):
        """Rows and ids of the old set minus any of ``ids``."""
        keep = ~np.isin(self.source_ids, ids)
        return self.rows[keep], self.source_ids[keep]

    def add(self, rows, ids):
        for row, sid in zip(rows, ids):
            self._clock += 1
            hit = np.flatnonzero(self.source_ids == sid)
            if hit.size:
                self._stamp[hit[0]] = self._clock
                continue
            self.rows = np.vstack([self.rows, row[None, :]])
            self.source_ids = np.append(self.source_ids, sid)
            self._stamp = np.append(self._stamp, self._clock)

    def cap(self, phi, H_batch):
        """Keep the ``capacity`` points closest on average to ``H_batch``; newer wins ties."""
        if len(self) <= self.capacity:
            return
        H_old, _ = embed(phi, self.rows)
        mean_dist = np.abs(H_old[:, None, :] - H_batch[None, :, :]).sum(axis=2).mean(axis=1)
        order = np.lexsort((-self._stamp, mean_dist))[:self.capacity]
        order = np.sort(order)
        self.rows = self.rows[order]
        self.source_ids = self.source_ids[order]
        self._stamp = self._stamp[order]


@dataclass
class StepRecord:
    step: int
    epoch: int
    minibatch: int
    ids: list
    selected_ids: list
    u: list
    column_mass: list
    selected_loss: float
    value: float
    wall_time: float


@dataclass
class TrainLog:
    config: TrainerConfig
    records: list = field(default_factory=list)
    theta: MlpParams = None
    phi: MlpParams = None
    n_train: int = 0

    def selected_counts(self):
        """Multiset of hard-selected ids over the whole run."""
        return Counter(i for r in self.records for i in r.selected_ids)

    def final_epoch_records(self):
        if not self.records:
            return []
        last = self.records[-1].epoch
        return [r for r in self.records if r.epoch == last]

    def to_dict(self, include_timing=True):
        records = []
        for r in self.records:
            rec = asdict(r)
            if not include_timing:
                rec.pop("wall_time")
            records.append(rec)
        return {
            "config": self.config.to_dict(),
            "n_train": self.n_train,
            "records": records,
            "final": {
                "value": self.records[-1].value if self.records else None,
                "selected_ids": sorted(self.selected_counts()),
                "theta": self.theta.to_dict() if self.theta is not None else None,
                "phi": self.phi.to_dict() if self.phi is not None else None,
            },
        }

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


@dataclass
class TrainState:
    theta: MlpParams
    phi: MlpParams
    old_set: OldSet
    config: TrainerConfig
    step: int = 0


@dataclass
class StepArtifacts:
    """Everything from the forward pass that the embedder gradient needs."""

    problem: SelectionProblem
    solution: object
    trace_new: object
    trace_old: object


def selected_loss(theta, X, y, u, gamma):
    """Loss on the softly selected examples, weighted ``u_j / (gamma |D|)``."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("soft selection scores must lie in [0, 1]")
    return loss_and_grad(theta, X, y, u / (gamma * len(u)))


def lookahead(theta, grad, alpha):
    return axpy_params(theta, grad, alpha)


def value(theta, test):
    """Mean test cross-entropy and top-1 accuracy."""
    if test.n == 0:
        raise ValueError("value needs a nonempty test set")
    logits, _ = mlp_forward(theta, test.features)
    losses, _ = batch_losses(logits, test.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == test.labels))
    return float(np.mean(losses)), acc


def _per_sample_dots(theta, X, y, g):
    """``<g, grad L_j(theta)>`` for every row without materializing per-row gradients."""
    stacked = per_sample_grads_stacked(theta, X, y)
    out = np.zeros(X.shape[0])
    for (gW, gb), W, b in zip(stacked, g.weights, g.biases):
        out += np.einsum("boi,oi->b", gW, W) + gb @ b
    return out


def value_grad_phi(theta, phi, artifacts, X, y, test, alpha, gamma, theta_hat=None):
    """Gradient of the lookahead test loss with respect to the embedder parameters.

    Returns ``(grad_phi, value_at_lookahead)``.
    """
    if theta_hat is None:
        u = np.clip(artifacts.solution.u, 0.0, 1.0)
        _, grad = selected_loss(theta, X, y, u, gamma)
        theta_hat = lookahead(theta, grad, alpha)
    m = test.n
    v_hat, g_test = loss_and_grad(theta_hat, test.features, test.labels, np.full(m, 1.0 / m))
    c = alpha / (gamma * X.shape[0]) * _per_sample_dots(theta, X, y, g_test)
    sg = differentiate_selection(artifacts.problem, artifacts.solution, -c)
    grad_phi = distance_backward(phi, artifacts.trace_new, artifacts.trace_old,
                                 sg.dJ_d_new_new, sg.dJ_d_new_old)
    return grad_phi, v_hat


def init_state(d_in, n_classes, config):
    rng = np.random.default_rng(config.seed)
    theta = init_mlp([d_in, *config.predictor_arch, n_classes], rng)
    phi = init_mlp([d_in, *config.embedder_arch], rng)
    return TrainState(theta, phi, OldSet(config.old_cap, d_in), config)


def forward_selection(state, X_new, ids):
    """Embed the minibatch and old set and solve the selection program."""
    cfg = state.config
    X_old, _ = state.old_set.excluding(ids)
    H_new, trace_new = embed(state.phi, X_new)
    trace_old = None
    H_old = np.zeros((0, H_new.shape[1]))
    if len(X_old):
        H_old, trace_old = embed(state.phi, X_old)
    problem = SelectionProblem(distance_blocks(H_new, H_old), gamma=cfg.gamma,
                               epsilon=cfg.epsilon, xi=cfg.xi)
    try:
        solution = solve_selection(problem)
    except NumericalError as exc:
        exc.step = state.step
        exc.problem = problem
        raise
    return StepArtifacts(problem, solution, trace_new, trace_old)


def train_step(state, ids, train, test, log=None, epoch=0, minibatch=0):
    """One alternating update of the predictor and the embedder on rows ``ids``."""
    t0 = time.perf_counter()
    cfg = state.config
    ids = np.asarray(ids, dtype=np.int64)
    X, y = train.features[ids], train.labels[ids]
    B = len(ids)

    if selection_budget(cfg.gamma, B) >= B:
        # everything fits in the budget: the program is bypassed and nothing flows to phi
        artifacts = None
        u = np.ones(B)
        mass = np.ones(B)
        selected = np.arange(B)
    else:
        artifacts = forward_selection(state, X, ids)
        sel = hard_select(artifacts.solution, artifacts.problem)
        u = np.clip(artifacts.solution.u, 0.0, 1.0)
        mass = sel.column_mass
        selected = sel.indices

    state.old_set.add(X[selected], ids[selected])
    if artifacts is not None:
        state.old_set.cap(state.phi, artifacts.trace_new.pre[-1])
    else:
        state.old_set.cap(state.phi, embed(state.phi, X)[0])

    loss, grad = selected_loss(state.theta, X, y, u, cfg.gamma)
    theta_next = axpy_params(state.theta, grad, cfg.alpha / cfg.k)
    theta_hat = lookahead(state.theta, grad, cfg.alpha)
    if artifacts is None or cfg.beta == 0:
        v_hat, _ = value(theta_hat, test)
        phi_next = state.phi
    else:
        grad_phi, v_hat = value_grad_phi(state.theta, state.phi, artifacts, X, y, test,
                                         cfg.alpha, cfg.gamma, theta_hat=theta_hat)
        phi_next = axpy_params(state.phi, grad_phi, cfg.beta / cfg.k)

    state.theta, state.phi = theta_next, phi_next
    state.step += 1
    if log is not None:
        log.records.append(StepRecord(
            step=state.step, epoch=epoch, minibatch=minibatch,
            ids=ids.tolist(), selected_ids=ids[selected].tolist(),
            u=u.tolist(), column_mass=np.asarray(mass).tolist(),
            selected_loss=loss, value=v_hat, wall_time=time.perf_counter() - t0,
        ))
    return state


def run(train, test, config):
    """Train for ``config.epochs`` epochs and return the log."""
    state = init_state(train.d, max(train.num_classes, test.num_classes), config)
    log = TrainLog(config, n_train=train.n)
    plan = make_minibatches(train.n, config.k, config.seed)
    order_rng = np.random.default_rng([config.seed, 1])
    for epoch in range(config.epochs):
        order = plan.order if epoch == 0 else order_rng.permutation(config.k)
        for b in order:
            train_step(state, plan.batch(b), train, test, log, epoch=epoch, minibatch=int(b))
    log.theta, log.phi = state.theta, state.phi
    return log


def value_ranking(log):
    """Training ids ordered from most to least valuable by final-epoch selection.

    Hard-selected ids come first, then the rest; both groups by descending
    column mass with ties on the smaller id.
    """
    ids, mass, chosen = [], [], set()
    for r in log.final_epoch_records():
        ids.extend(r.ids)
        mass.extend(r.column_mass)
        chosen.update(r.selected_ids)
    ids = np.asarray(ids, dtype=np.int64)
    mass = np.asarray(mass)
    is_sel = np.isin(ids, list(chosen))
    order = np.lexsort((ids, -mass, ~is_sel))
    return ids[order]


def _count(log, fraction):
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    return round_half_up(fraction * log.n_train)


def extract_selection(log, fraction):
    """The top ``fraction`` of training ids by value."""
    return value_ranking(log)[:_count(log, fraction)]


def reverse_selection(log, fraction):
    """The bottom ``fraction`` of training ids, least valuable first."""
    return value_ranking(log)[::-1][:_count(log, fraction)]
