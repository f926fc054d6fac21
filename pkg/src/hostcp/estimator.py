"""scikit-learn style wrappers around the training loop and the retraining model."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import LabeledDataset, split_indices
from .embedder import embed
from .tensor import axpy_params, init_mlp, loss_and_grad, mlp_forward
from .trainer import TrainerConfig, extract_selection, reverse_selection, run, value_ranking


def _encode(y):
    classes = unique_labels(y)
    return classes, np.searchsorted(classes, y)


class SGDNetClassifier(ClassifierMixin, BaseEstimator):
    """ReLU MLP trained by plain minibatch SGD on mean cross-entropy."""

    def __init__(self, hidden=(32, 32), lr=0.1, epochs=50, batch_size=32, seed=0):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = _encode(y)
        n_out = max(len(self.classes_), 2)
        rng = np.random.default_rng(self.seed)
        params = init_mlp([X.shape[1], *self.hidden, n_out], rng)
        n = X.shape[0]
        for _ in range(self.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = np.sort(perm[start:start + self.batch_size])
                _, grad = loss_and_grad(params, X[idx], yi[idx], np.full(len(idx), 1.0 / len(idx)))
                params = axpy_params(params, grad, self.lr)
        self.params_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        logits, _ = mlp_forward(self.params_, X)
        return logits

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits[:, :len(self.classes_)], axis=1)]


class HostCPSelector(TransformerMixin, BaseEstimator):
    """Learns which training rows are worth keeping for a given evaluation set.

    ``fit`` runs the joint training loop. Afterwards ``support_`` holds the
    row indices of the top ``gamma`` fraction, ``ranking_`` orders all rows
    from most to least valuable, ``transform`` maps features into the learned
    selection embedding and ``predict`` uses the jointly trained predictor.

    If ``eval_set`` is not passed to ``fit``, ``eval_fraction`` of the
    training rows is held out and used as the evaluation set.
    """

    def __init__(self, alpha=1.0, beta=1.0, gamma=0.2, xi=0.5, epsilon=1e-2, epochs=5, k=40,
                 old_cap=20, seed=0, predictor_arch=(32, 32), embedder_arch=(16, 8),
                 eval_fraction=0.2):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.xi = xi
        self.epsilon = epsilon
        self.epochs = epochs
        self.k = k
        self.old_cap = old_cap
        self.seed = seed
        self.predictor_arch = predictor_arch
        self.embedder_arch = embedder_arch
        self.eval_fraction = eval_fraction

    def _config(self):
        return TrainerConfig(alpha=self.alpha, beta=self.beta, gamma=self.gamma, xi=self.xi,
                             epsilon=self.epsilon, epochs=self.epochs, k=self.k,
                             old_cap=self.old_cap, seed=self.seed,
                             predictor_arch=list(self.predictor_arch),
                             embedder_arch=list(self.embedder_arch))

    def fit(self, X, y, eval_set=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = _encode(y)
        n_classes = max(len(self.classes_), 2)
        train = LabeledDataset(X, yi, n_classes)
        if eval_set is None:
            self.train_rows_, eval_rows = split_indices(train.n, self.eval_fraction, self.seed)
            train, test = train.subset(self.train_rows_), train.subset(eval_rows)
        else:
            Xe, ye = check_X_y(*eval_set, dtype=np.float64)
            test = LabeledDataset(Xe, np.searchsorted(self.classes_, ye), n_classes)
            self.train_rows_ = np.arange(X.shape[0])
        self.log_ = run(train, test, self._config())
        self.ranking_ = self.train_rows_[value_ranking(self.log_)]
        self.support_ = self.train_rows_[extract_selection(self.log_, self.gamma)]
        self.n_features_in_ = X.shape[1]
        return self

    def get_support(self, indices=True):
        check_is_fitted(self, "support_")
        if indices:
            return np.sort(self.support_)
        mask = np.zeros(int(self.train_rows_.max()) + 1, dtype=bool)
        mask[self.support_] = True
        return mask

    def low_value(self, fraction):
        """Row indices of the least valuable ``fraction`` of the training rows."""
        check_is_fitted(self, "log_")
        return self.train_rows_[reverse_selection(self.log_, fraction)]

    def transform(self, X):
        check_is_fitted(self, "log_")
        X = check_array(X, dtype=np.float64)
        H, _ = embed(self.log_.phi, X)
        return H

    def predict(self, X):
        check_is_fitted(self, "log_")
        X = check_array(X, dtype=np.float64)
        logits, _ = mlp_forward(self.log_.theta, X)
        return self.classes_[np.argmax(logits[:, :len(self.classes_)], axis=1)]

    def select(self, X, y):
        """The selected rows of ``(X, y)``, which must be the arrays passed to ``fit``."""
        if not hasattr(self, "support_"):
            raise NotFittedError("call fit before select")
        idx = self.get_support()
        return np.asarray(X)[idx], np.asarray(y)[idx]
