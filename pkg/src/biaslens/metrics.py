"""Confusion matrix and the accuracy / macro precision / recall / F1
quantities reported per audit condition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class EvalMetrics:
    confusion: np.ndarray       # K x K counts, rows = true, cols = predicted
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    zero_division_classes: tuple  # classes where a 0/0 was defined as 0

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "zero_division_classes": list(self.zero_division_classes),
        }


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """M[t][p] = number of items with true class t predicted as p."""
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape or preds.ndim != 1 or len(preds) == 0:
        raise ConfigError("predictions and labels must be equal-length, "
                          "nonempty 1D sequences")
    if preds.min() < 0 or preds.max() >= num_classes \
            or labs.min() < 0 or labs.max() >= num_classes:
        raise ConfigError(f"class index out of range for K={num_classes}")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (labs, preds), 1)
    return m


def classification_metrics(confusion: np.ndarray) -> EvalMetrics:
    """Macro-averaged metrics from a K x K count matrix.

    Per-class precision and recall with a zero denominator are defined
    as 0 and the affected classes are flagged.
    """
    m = np.asarray(confusion)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ConfigError(f"confusion matrix must be square, got {m.shape}")
    if np.any(m < 0) or not np.issubdtype(m.dtype, np.integer):
        raise ConfigError("confusion entries must be non-negative integers")
    total = int(m.sum())
    if total == 0:
        raise ConfigError("confusion matrix is all zero")
    diag = np.diag(m).astype(np.float64)
    col = m.sum(axis=0).astype(np.float64)
    row = m.sum(axis=1).astype(np.float64)
    zero_div = []
    k = m.shape[0]
    precision = np.zeros(k)
    recall = np.zeros(k)
    for i in range(k):
        if col[i] > 0:
            precision[i] = diag[i] / col[i]
        else:
            zero_div.append(i)
        if row[i] > 0:
            recall[i] = diag[i] / row[i]
        else:
            if i not in zero_div:
                zero_div.append(i)
    pr_sum = precision + recall
    f1 = np.where(pr_sum > 0, 2.0 * precision * recall /
                  np.where(pr_sum > 0, pr_sum, 1.0), 0.0)
    return EvalMetrics(
        confusion=m.astype(np.int64),
        accuracy=float(diag.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        zero_division_classes=tuple(sorted(zero_div)),
    )


def render_summary_row(m: EvalMetrics) -> str:
    """One-line summary in the accuracy / precision / recall / F1 layout."""
    return (f"Accuracy: {m.accuracy * 100:.1f}% | "
            f"Precision: {m.macro_precision * 100:.1f}% | "
            f"Recall: {m.macro_recall * 100:.1f}% | "
            f"F1: {m.macro_f1:.4f}")
