import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hostcp.dataset import gen_synthetic
from hostcp.estimator import HostCPSelector, SGDNetClassifier


@pytest.fixture(scope="module")
def data():
    ds = gen_synthetic(150, 3, 2)
    return ds.features, ds.labels


@pytest.fixture(scope="module")
def fitted(data):
    X, y = data
    return HostCPSelector(epochs=1, k=6, seed=1).fit(X, y)


class TestSGDNetClassifier:
    def test_get_params_and_clone(self):
        clf = SGDNetClassifier(lr=0.05, epochs=3)
        assert clf.get_params()["lr"] == 0.05
        assert clone(clf).get_params() == clf.get_params()

    def test_fit_predict(self, data):
        X, y = data
        clf = SGDNetClassifier(epochs=5).fit(X, y)
        assert set(clf.predict(X)) <= {0, 1}
        assert clf.decision_function(X).shape == (150, 2)

    def test_string_labels(self, data):
        X, y = data
        names = np.array(["neg", "pos"])[y]
        assert set(SGDNetClassifier(epochs=2).fit(X, names).predict(X)) <= {"neg", "pos"}

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            SGDNetClassifier().predict(data[0])


class TestHostCPSelector:
    def test_support_size(self, fitted):
        assert len(fitted.get_support()) == round(0.2 * len(fitted.train_rows_))

    def test_support_within_training_rows(self, fitted):
        assert set(fitted.get_support()) <= set(fitted.train_rows_)

    def test_transform_shape(self, fitted, data):
        assert fitted.transform(data[0]).shape == (150, 8)

    def test_low_value_disjoint_from_support(self, fitted):
        assert not set(fitted.low_value(0.8)) & set(fitted.get_support())

    def test_eval_set(self, data):
        X, y = data
        sel = HostCPSelector(epochs=1, k=5).fit(X[:100], y[:100], eval_set=(X[100:], y[100:]))
        assert len(sel.train_rows_) == 100

    def test_select(self, fitted, data):
        Xs, ys = fitted.select(*data)
        assert len(Xs) == len(ys) == len(fitted.get_support())

    def test_params_roundtrip(self):
        sel = HostCPSelector(gamma=0.3, old_cap=4)
        assert clone(sel).get_params()["old_cap"] == 4
