"""Evaluation metrics: RMSE, confusion matrices, accuracy."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError


def rmse(pred, actual):
    """Root-mean-square error between two equal-length sample arrays."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape or p.size < 1:
        raise DimensionError(f"rmse: lengths {p.size} and {a.size} do not match")
    d = p - a
    return float(np.sqrt((d * d).mean()))


def accuracy(preds, truths):
    p = list(preds)
    t = list(truths)
    if len(p) != len(t) or not p:
        raise InputError(f"accuracy: lengths {len(p)} and {len(t)} do not match")
    return sum(x == y for x, y in zip(p, t)) / len(p)


def confusion_counts(preds, truths, labels):
    """Integer count matrix; entry (i, j) counts true label i predicted as j."""
    p = list(preds)
    t = list(truths)
    if len(p) != len(t) or not p:
        raise InputError(f"confusion matrix: lengths {len(p)} and {len(t)} do not match")
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for pred, truth in zip(p, t):
        if truth not in index:
            raise InputError(f"confusion matrix: true label {truth!r} not in configured set")
        if pred not in index:
            raise InputError(f"confusion matrix: predicted label {pred!r} not in configured set")
        counts[index[truth], index[pred]] += 1
    return counts


def confusion_matrix(preds, truths, labels):
    """Row-normalized confusion matrix; rows with no samples stay all-zero."""
    counts = confusion_counts(preds, truths, labels)
    out = np.zeros(counts.shape, dtype=np.float64)
    row_totals = counts.sum(axis=1)
    for i, total in enumerate(row_totals):
        if total > 0:
            out[i] = counts[i] / total
    return out


def per_class_accuracy(preds, truths, labels):
    """Diagonal of the row-normalized confusion matrix, keyed by label."""
    cm = confusion_matrix(preds, truths, labels)
    return {lab: float(cm[i, i]) for i, lab in enumerate(labels)}
