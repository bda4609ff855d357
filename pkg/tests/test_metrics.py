import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eeg_inception.metrics import (MetricsReport, accuracy, cohen_kappa, confusion_matrix, cross_subject_stats,
                                   f1_recall, per_class_accuracy, precision_recall_f1, roc_auc, roc_curve,
                                   write_confusion_csv, write_roc_csv)

BINARY_CM = np.array([[998, 406], [85, 687]])
FOUR_CM = np.array([[253, 32, 3, 5],
                    [60, 214, 6, 12],
                    [79, 57, 159, 16],
                    [74, 51, 11, 152]])
BINARY_WITH_AUG = [87.20, 79.79, 84.19, 96.32, 94.06, 89.27, 82.98, 90.63, 92.80]
FOUR_WITH_AUG = [89.61, 80.01, 96.17, 81.26, 83.76, 81.20, 94.75, 98.28, 90.50]


# ---------------------------------------------------------------- published tables

def test_binary_table_scalars():
    assert 100 * accuracy(BINARY_CM) == pytest.approx(77.44, abs=0.01)
    assert cohen_kappa(BINARY_CM) == pytest.approx(0.55, abs=0.005)
    f1, recall = f1_recall(BINARY_CM, positive=1)
    assert f1 == pytest.approx(0.737, abs=0.001)
    assert recall == pytest.approx(687 / 772)
    precision, _, _ = precision_recall_f1(BINARY_CM, 1)
    assert precision == pytest.approx(687 / 1093)


def test_binary_table_row_accuracies():
    np.testing.assert_allclose(100 * per_class_accuracy(BINARY_CM), [71.08, 88.99], atol=0.005)


def test_four_class_table_scalars():
    assert cohen_kappa(FOUR_CM) == pytest.approx(0.544, abs=0.001)
    macro_f1, macro_recall = f1_recall(FOUR_CM, "macro")
    assert macro_f1 == pytest.approx(0.655, abs=0.001)
    np.testing.assert_allclose(100 * per_class_accuracy(FOUR_CM), [86.35, 73.29, 51.13, 52.78], atol=0.005)
    # the printed average accuracy is the mean of the per-class rates, i.e. macro recall
    assert 100 * macro_recall == pytest.approx(65.88, abs=0.01)
    assert accuracy(FOUR_CM) == pytest.approx(778 / 1184)


def test_cross_subject_columns():
    mean, std = cross_subject_stats(BINARY_WITH_AUG)
    assert (mean, std) == (pytest.approx(88.58, abs=0.01), pytest.approx(5.50, abs=0.01))
    mean, std = cross_subject_stats(FOUR_WITH_AUG)
    assert (mean, std) == (pytest.approx(88.39, abs=0.01), pytest.approx(7.06, abs=0.01))


def test_cross_subject_degenerate():
    assert cross_subject_stats([80.0, 80.0, 80.0]) == (80.0, 0.0)
    mean, std = cross_subject_stats([70.0])
    assert mean == 70.0 and np.isnan(std)


# ---------------------------------------------------------------- trivial cases

def test_perfect_predictions():
    cm = np.diag([5, 7, 3])
    assert accuracy(cm) == 1.0
    assert cohen_kappa(cm) == 1.0
    assert f1_recall(cm, "macro") == (1.0, 1.0)


def test_all_one_class_predictions():
    cm = confusion_matrix([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert accuracy(cm) == 0.5
    assert cohen_kappa(cm) == 0.0
    f1, recall = f1_recall(cm, 1)
    assert recall == 0.0 and np.isnan(f1)


def test_kappa_undefined_when_chance_is_one():
    assert np.isnan(cohen_kappa(np.array([[10, 0], [0, 0]])))


def test_absent_class_is_undefined_not_zero():
    report = MetricsReport.from_predictions([0, 0, 1], [0, 1, 1], 3)
    assert np.isnan(report.per_class_accuracy[2])
    assert report.to_dict()["per_class_accuracy"][2] is None


def test_confusion_rows_are_actual():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    np.testing.assert_array_equal(cm, [[0, 2], [0, 1]])


# ---------------------------------------------------------------- ROC / AUC

def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_hand_example():
    assert roc_auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]) == pytest.approx(0.75, abs=1e-15)


def test_auc_trivial_cases():
    assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert np.isnan(roc_auc([0.1, 0.2], [1, 1]))


@pytest.mark.parametrize("seed", range(10))
def test_auc_matches_pairwise_brute_force(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, 200)
    scores = np.round(rng.random(200) + 0.3 * labels, 1)    # rounding forces ties
    assert roc_auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-10)


def test_roc_curve_shape():
    fpr, tpr, thr = roc_curve([0.9, 0.8, 0.8, 0.1], [1, 0, 1, 0])
    np.testing.assert_allclose(fpr, [0, 0, 0.5, 1])
    np.testing.assert_allclose(tpr, [0, 0.5, 1, 1])
    assert thr[0] == np.inf
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


# ---------------------------------------------------------------- independent-formula agreement

def kappa_direct(y_true, y_pred, k):
    n = len(y_true)
    p_o = sum(a == b for a, b in zip(y_true, y_pred)) / n
    p_e = sum((sum(1 for a in y_true if a == c) / n) * (sum(1 for b in y_pred if b == c) / n) for c in range(k))
    return (p_o - p_e) / (1 - p_e)


def f1_direct(y_true, y_pred, c):
    tp = sum(1 for a, b in zip(y_true, y_pred) if a == c and b == c)
    fp = sum(1 for a, b in zip(y_true, y_pred) if a != c and b == c)
    fn = sum(1 for a, b in zip(y_true, y_pred) if a == c and b != c)
    return 2 * tp / (2 * tp + fp + fn)


@pytest.mark.parametrize("seed", range(10))
def test_kappa_and_f1_match_direct_formulas(seed):
    rng = np.random.default_rng(seed)
    k = 2 + seed % 3
    y_true = rng.integers(0, k, 200)
    y_pred = np.where(rng.random(200) < 0.6, y_true, rng.integers(0, k, 200))
    cm = confusion_matrix(y_true, y_pred, k)
    assert cohen_kappa(cm) == pytest.approx(kappa_direct(y_true, y_pred, k), abs=1e-10)
    for c in range(k):
        assert precision_recall_f1(cm, c)[2] == pytest.approx(f1_direct(y_true, y_pred, c), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=80))
def test_report_invariants(pairs):
    y_true, y_pred = map(np.array, zip(*pairs))
    report = MetricsReport.from_predictions(y_true, y_pred, 4)
    cm = report.confusion
    assert cm.sum() == len(pairs) and np.all(cm >= 0)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(y_true, minlength=4))
    assert report.accuracy == pytest.approx(np.trace(cm) / cm.sum())
    assert 0 <= report.accuracy <= 1
    if not np.isnan(report.kappa):
        assert -1 - 1e-12 <= report.kappa <= 1 + 1e-12


# ---------------------------------------------------------------- report I/O

def test_report_json_and_csv(tmp_path):
    report = MetricsReport.from_predictions([0, 1, 1, 0], [0, 1, 0, 0], 2, scores=[0.1, 0.9, 0.4, 0.2])
    d = json.loads(report.to_json())
    assert d["confusion"] == [[2, 0], [1, 1]]
    assert d["auc"] == 1.0
    assert "accuracy" in report.summary()
    write_confusion_csv(report.confusion, tmp_path / "c.csv", ["Left", "Right"])
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "Left,2,0"
    write_roc_csv([0.1, 0.9, 0.4, 0.2], [0, 1, 1, 0], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr,threshold" and len(lines) == 6
