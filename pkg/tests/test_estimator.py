import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from ensloss.estimator import EnsLossClassifier


def blobs_xy(n=300, seed=0):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1, 0)
    X = rng.normal(size=(n, 2))
    X[:, 0] += np.where(y == 1, 1.5, -1.5)
    return X, y


def test_get_set_params_round_trip():
    clf = EnsLossClassifier(epochs=7, lr=0.05)
    params = clf.get_params()
    assert params["epochs"] == 7
    clone(clf)  # sklearn clone relies on the params contract
    clf2 = EnsLossClassifier().set_params(**params)
    assert clf2.lr == 0.05


def test_fit_predict_on_blobs():
    X, y = blobs_xy()
    clf = EnsLossClassifier(epochs=30, batch_size=32, lr=0.1, hidden_layer_sizes=(16,), random_state=0)
    clf.fit(X, y)
    acc = (clf.predict(X) == y).mean()
    assert acc > 0.85
    assert set(clf.classes_) == {0, 1}
    assert clf.decision_function(X).shape == (X.shape[0],)


def test_fixed_mode_baseline():
    X, y = blobs_xy()
    clf = EnsLossClassifier(mode="fixed:logistic", epochs=20, batch_size=32, hidden_layer_sizes=(8,))
    clf.fit(X, y)
    assert clf.score(X, y) > 0.8


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        EnsLossClassifier().predict(np.ones((2, 2)))


def test_non_binary_rejected():
    X = np.ones((6, 2))
    y = [0, 1, 2, 0, 1, 2]
    with pytest.raises(ValueError, match="binary"):
        EnsLossClassifier(epochs=1).fit(X, y)


def test_string_labels_preserved():
    X, y01 = blobs_xy(200)
    y = np.where(y01 == 1, "cat", "dog")
    clf = EnsLossClassifier(epochs=15, batch_size=32, hidden_layer_sizes=(8,))
    clf.fit(X, y)
    assert set(clf.predict(X)) <= {"cat", "dog"}


def test_feature_count_checked():
    X, y = blobs_xy(100)
    clf = EnsLossClassifier(epochs=2, batch_size=16, hidden_layer_sizes=(4,)).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        clf.predict(np.ones((3, 5)))


def test_pipeline_and_cross_val():
    X, y = blobs_xy(200)
    pipe = make_pipeline(
        StandardScaler(),
        EnsLossClassifier(epochs=10, batch_size=32, hidden_layer_sizes=(8,), random_state=1),
    )
    scores = cross_val_score(pipe, X, y, cv=3)
    assert scores.mean() > 0.8


def test_validation_fraction_records_metrics():
    X, y = blobs_xy(300)
    clf = EnsLossClassifier(
        epochs=8, batch_size=32, hidden_layer_sizes=(8,), validation_fraction=0.25, random_state=0
    )
    clf.fit(X, y)
    assert clf.record_.rows[0]["test_acc"] is not None
    clf2 = EnsLossClassifier(epochs=8, batch_size=32, hidden_layer_sizes=(8,), random_state=0)
    clf2.fit(X, y)
    assert clf2.record_.rows[0]["test_acc"] is None


def test_refit_deterministic():
    X, y = blobs_xy(200)
    a = EnsLossClassifier(epochs=10, batch_size=32, hidden_layer_sizes=(8,), random_state=42).fit(X, y)
    b = EnsLossClassifier(epochs=10, batch_size=32, hidden_layer_sizes=(8,), random_state=42).fit(X, y)
    assert np.array_equal(a.decision_function(X), b.decision_function(X))
