"""Metric oracle tests: RMSE, confusion matrices."""

import math
from fractions import Fraction

import numpy as np
import pytest

from ppg2ecg.errors import DimensionError, InputError
from ppg2ecg.metrics import accuracy, confusion_counts, confusion_matrix, per_class_accuracy, rmse


def test_rmse_identical_is_zero():
    assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_rmse_hand_example():
    assert rmse([1.0, 1.0], [0.0, 2.0]) == 1.0


def test_rmse_length_mismatch():
    with pytest.raises(DimensionError):
        rmse([1.0], [1.0, 2.0])


def test_rmse_against_fsum_oracle():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        p = rng.normal(size=n)
        a = rng.normal(size=n)
        expected = math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(p, a)) / n)
        assert abs(rmse(p, a) - expected) < 1e-9


def test_confusion_perfect_predictions():
    labels = ["A", "B", "C"]
    preds = ["A", "B", "C", "A"]
    cm = confusion_matrix(preds, preds, labels)
    np.testing.assert_array_equal(cm, np.eye(3))


def test_confusion_hand_count():
    labels = ["A", "B"]
    truths = ["A", "A", "B"]
    preds = ["A", "B", "B"]
    cm = confusion_matrix(preds, truths, labels)
    np.testing.assert_array_equal(cm, [[0.5, 0.5], [0.0, 1.0]])


def test_confusion_rows_sum_to_one_rationally():
    rng = np.random.default_rng(5)
    labels = list("WXYZ")
    truths = [labels[i] for i in rng.integers(0, 4, size=200)]
    preds = [labels[i] for i in rng.integers(0, 4, size=200)]
    counts = confusion_counts(preds, truths, labels)
    for row in counts:
        total = int(row.sum())
        if total:
            assert sum(Fraction(int(c), total) for c in row) == 1


def test_confusion_rejects_unknown_label_and_mismatch():
    with pytest.raises(InputError):
        confusion_matrix(["A"], ["Q"], ["A", "B"])
    with pytest.raises(InputError):
        confusion_matrix(["A"], ["A", "B"], ["A", "B"])


def test_accuracy_and_per_class():
    labels = ["A", "B"]
    truths = ["A", "A", "B", "B"]
    preds = ["A", "B", "B", "B"]
    assert accuracy(preds, truths) == 0.75
    per = per_class_accuracy(preds, truths, labels)
    assert per == {"A": 0.5, "B": 1.0}
