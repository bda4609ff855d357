"""
Metrics from a confusion matrix
===============================

Compute accuracy, kappa, F1, recall and AUC, including the published binary
and four-class confusion matrices, and the cross-subject mean and spread.
"""
import numpy as np

from eeg_inception.metrics import (MetricsReport, accuracy, cohen_kappa, cross_subject_stats, f1_recall,
                                   per_class_accuracy, roc_auc)

binary = np.array([[998, 406], [85, 687]])          # rows actual, columns predicted
f1, recall = f1_recall(binary, positive=1)
print(f"binary: accuracy {accuracy(binary):.4f}  kappa {cohen_kappa(binary):.3f}  F1 {f1:.3f}  recall {recall:.3f}")

four = np.array([[253, 32, 3, 5], [60, 214, 6, 12], [79, 57, 159, 16], [74, 51, 11, 152]])
macro_f1, macro_recall = f1_recall(four, "macro")
print(f"four-class: kappa {cohen_kappa(four):.3f}  macro F1 {macro_f1:.3f}  macro recall {macro_recall:.4f}")
print("per-class accuracy:", np.round(100 * per_class_accuracy(four), 2))

# mean and sample standard deviation over subjects
mean, std = cross_subject_stats([87.20, 79.79, 84.19, 96.32, 94.06, 89.27, 82.98, 90.63, 92.80])
print(f"cross-subject: {mean:.2f} +/- {std:.2f}")

# AUC from scores; ties count half
print("AUC:", roc_auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]))
report = MetricsReport.from_predictions([0, 1, 1, 0], [0, 1, 0, 0], 2, scores=[0.1, 0.9, 0.4, 0.2])
print(report.to_json())
