import warnings

import numpy as np
import pytest
from sklearn import metrics as skm

from popgraph.metrics import (
    accuracy,
    binary_auc,
    confusion_matrix,
    macro_auc,
    macro_f1,
    margin_accuracy,
    midranks,
)

import oracles


def test_hand_computed_fixtures():
    assert oracles.metric_fixture_failures() == []


def test_midranks():
    assert midranks(np.array([3.0, 1.0, 3.0, 2.0])).tolist() == [3.5, 1.0, 3.5, 2.0]


@pytest.mark.parametrize("seed", range(10))
def test_binary_auc_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, 60)
    scores = np.round(rng.random(60), 1)  # coarse values force ties
    assert binary_auc(scores, labels) == pytest.approx(skm.roc_auc_score(labels, scores), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_macro_auc_and_f1_match_sklearn(seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(4), size=80)
    labels = rng.integers(0, 4, 80)
    want = skm.roc_auc_score(labels, probs, multi_class="ovr", average="macro")
    assert macro_auc(probs, labels) == pytest.approx(want, abs=1e-12)
    pred = probs.argmax(axis=1)
    assert macro_f1(pred, labels, 4) == pytest.approx(skm.f1_score(labels, pred, average="macro"), abs=1e-12)
    assert accuracy(pred, labels) == skm.accuracy_score(labels, pred)
    np.testing.assert_array_equal(confusion_matrix(pred, labels, 4), skm.confusion_matrix(labels, pred, labels=range(4)))


def test_single_class_auc_is_absent_with_warning():
    assert binary_auc(np.array([0.1, 0.2]), np.array([1, 1])) is None
    with pytest.warns(UserWarning, match="single class"):
        assert macro_auc(np.array([[0.4, 0.6], [0.3, 0.7]]), np.array([1, 1])) is None


def test_perfect_separation():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert macro_auc(np.array([[0.9, 0.1], [0.2, 0.8], [0.4, 0.6]]), np.array([0, 1, 1])) == 1.0


def test_adding_correct_samples_never_lowers_accuracy():
    rng = np.random.default_rng(0)
    pred, labels = rng.integers(0, 3, 30), rng.integers(0, 3, 30)
    base = accuracy(pred, labels)
    for k in range(1, 10):
        extra = np.arange(k) % 3
        assert accuracy(np.concatenate([pred, extra]), np.concatenate([labels, extra])) >= base


def test_margin_boundary_and_empty():
    assert margin_accuracy(np.array([22]), np.array([20]), 2) == 1.0
    assert margin_accuracy(np.array([23]), np.array([20]), 2) == 0.0
    with pytest.raises(ValueError):
        margin_accuracy(np.array([]), np.array([]), 2)
    with pytest.raises(ValueError):
        accuracy(np.array([]), np.array([]))
