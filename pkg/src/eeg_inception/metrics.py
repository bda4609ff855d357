"""Classification metrics computed from a confusion matrix (rows = actual).

Quantities that are mathematically undefined for the given data (a class
never predicted, a single-class ROC, ...) come back as ``nan`` rather than 0.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    return float(np.trace(cm) / cm.sum())


def per_class_accuracy(cm) -> np.ndarray:
    """Row-normalised diagonal; nan for classes absent from the data."""
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(cm) / rows, np.nan)


def cohen_kappa(cm) -> float:
    """``(p_o - p_e) / (1 - p_e)`` with chance agreement from the marginals."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("cohen_kappa: empty confusion matrix")
    p_o = np.trace(cm) / total
    p_e = float(np.dot(cm.sum(axis=0), cm.sum(axis=1))) / total ** 2
    if np.isclose(p_e, 1.0):
        return float("nan")
    return float((p_o - p_e) / (1.0 - p_e))


def precision_recall_f1(cm, cls: int) -> tuple[float, float, float]:
    cm = np.asarray(cm, dtype=np.float64)
    tp = cm[cls, cls]
    predicted = cm[:, cls].sum()
    actual = cm[cls, :].sum()
    precision = tp / predicted if predicted > 0 else float("nan")
    recall = tp / actual if actual > 0 else float("nan")
    if np.isnan(precision) or np.isnan(recall) or precision + recall == 0:
        f1 = float("nan") if np.isnan(precision) or np.isnan(recall) else 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return float(precision), float(recall), float(f1)


def f1_recall(cm, positive: int | str = 1) -> tuple[float, float]:
    """``(F1, recall)`` for one positive class, or unweighted means with ``"macro"``."""
    cm = np.asarray(cm)
    if positive == "macro":
        scores = [precision_recall_f1(cm, c) for c in range(cm.shape[0])]
        return float(np.mean([s[2] for s in scores])), float(np.mean([s[1] for s in scores]))
    _, recall, f1 = precision_recall_f1(cm, int(positive))
    return f1, recall


def roc_curve(scores, labels):
    """ROC points from a descending-score sweep; tied scores form one step.

    Returns ``(fpr, tpr, thresholds)`` starting at ``(0, 0, inf)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    # last index of each block of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(l)[ends]
    fps = np.cumsum(~l)[ends]
    n_pos, n_neg = labels.sum(), (~labels).sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.r_[0.0, tps / n_pos]
        fpr = np.r_[0.0, fps / n_neg]
    return fpr, tpr, np.r_[np.inf, s[ends]]


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under :func:`roc_curve` (equal to the Mann-Whitney statistic)."""
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        return float("nan")
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def cross_subject_stats(accuracies) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation."""
    a = np.asarray(accuracies, dtype=np.float64)
    if a.size < 2:
        return float(a.mean()) if a.size else float("nan"), float("nan")
    return float(a.mean()), float(a.std(ddof=1))


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    per_class_accuracy: list
    kappa: float
    f1: float
    recall: float
    macro_f1: float
    macro_recall: float
    auc: float | None = None
    positive_class: int = 1
    history: list = field(default_factory=list)
    inference_seconds_per_sample: float | None = None

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int, scores=None,
                         positive_class: int = 1) -> "MetricsReport":
        cm = confusion_matrix(y_true, y_pred, n_classes)
        return cls.from_confusion(cm, scores=scores, labels=y_true, positive_class=positive_class)

    @classmethod
    def from_confusion(cls, cm, scores=None, labels=None, positive_class: int = 1) -> "MetricsReport":
        cm = np.asarray(cm, dtype=np.int64)
        n = cm.shape[0]
        if n == 2:
            f1, recall = f1_recall(cm, positive_class)
        else:
            f1, recall = f1_recall(cm, "macro")
        macro_f1, macro_recall = f1_recall(cm, "macro")
        auc = None
        if n == 2 and scores is not None:
            auc = roc_auc(scores, np.asarray(labels) == positive_class)
        return cls(confusion=cm, accuracy=accuracy(cm), per_class_accuracy=list(per_class_accuracy(cm)),
                   kappa=cohen_kappa(cm), f1=f1, recall=recall, macro_f1=macro_f1,
                   macro_recall=macro_recall, auc=auc, positive_class=positive_class)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        d["n_samples"] = int(self.confusion.sum())

        def clean(v):
            if isinstance(v, float) and not np.isfinite(v):
                return None
            if isinstance(v, (np.floating, np.integer)):
                return clean(v.item())
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v

        return clean(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"accuracy {100 * self.accuracy:.2f}%  kappa {self.kappa:.3f}  F1 {self.f1:.3f}  "
                 f"recall {self.recall:.3f}"]
        if self.auc is not None:
            lines.append(f"AUC {self.auc:.3f}")
        lines.append("confusion (rows actual, cols predicted):")
        lines += ["  " + " ".join(f"{v:6d}" for v in row) for row in self.confusion]
        return "\n".join(lines)


def write_confusion_csv(cm, path, class_names=None) -> None:
    cm = np.asarray(cm)
    names = class_names or [str(i) for i in range(cm.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["actual\\predicted"] + list(names))
        for name, row in zip(names, cm):
            w.writerow([name] + [int(v) for v in row])


def write_roc_csv(scores, labels, path) -> None:
    fpr, tpr, thr = roc_curve(scores, labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for row in zip(fpr, tpr, thr):
            w.writerow([repr(float(v)) for v in row])
