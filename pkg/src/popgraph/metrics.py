"""Classification and imputation metrics."""

from __future__ import annotations

import warnings

import numpy as np


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy: no labels")
    return float((pred == labels).mean())


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Mann-Whitney AUC; None when only one class is present."""
    labels = np.asarray(labels).astype(bool)
    npos, nneg = int(labels.sum()), int((~labels).sum())
    if npos == 0 or nneg == 0:
        return None
    r = midranks(scores)
    return float((r[labels].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


def macro_auc(probs: np.ndarray, labels: np.ndarray) -> float | None:
    """Binary AUC on the positive-class column, or macro one-vs-rest AUC.

    Classes absent from ``labels`` (or present alone) are skipped; returns
    None with a warning when no class yields a defined AUC.
    """
    probs, labels = np.asarray(probs), np.asarray(labels)
    k = probs.shape[1]
    if k == 2:
        out = binary_auc(probs[:, 1], labels == 1)
    else:
        vals = [binary_auc(probs[:, c], labels == c) for c in range(k)]
        vals = [v for v in vals if v is not None]
        out = float(np.mean(vals)) if vals else None
    if out is None:
        warnings.warn("AUC undefined: evaluation labels contain a single class", stacklevel=2)
    return out


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def binary_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred).astype(bool), np.asarray(truth).astype(bool)
    return f1_from_counts(int((pred & truth).sum()), int((pred & ~truth).sum()), int((~pred & truth).sum()))


def macro_f1(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes`` classes.

    A class that is neither predicted nor present scores 1.
    """
    pred, labels = np.asarray(pred), np.asarray(labels)
    return float(np.mean([binary_f1(pred == c, labels == c) for c in range(num_classes)]))


def margin_accuracy(pred: np.ndarray, truth: np.ndarray, margin: float) -> float:
    """Share of predictions within ``margin`` of the truth (inclusive)."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if truth.size == 0:
        raise ValueError("margin_accuracy: no targets")
    return float((np.abs(pred - truth) <= margin).mean())


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (np.asarray(labels), np.asarray(pred)), 1)
    return out
