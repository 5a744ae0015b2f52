"""Confusion-matrix metrics and seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AggregationError(ValueError):
    pass


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    if cm.sum() == 0:
        raise ValueError("confusion matrix holds no evaluations")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    return cm


def accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def per_class_f1(cm) -> np.ndarray:
    """F1 per class; a class with precision + recall == 0 scores 0."""
    cm = _check(cm).astype(np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm) -> float:
    return float(per_class_f1(cm).mean())


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.3f}±{self.std:.4f}"


def aggregate_runs(values) -> MeanStd:
    """Mean and sample (ddof=1) standard deviation over at least two runs."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise AggregationError(f"need at least two runs to aggregate, got {v.size}")
    return MeanStd(float(v.mean()), float(v.std(ddof=1)), int(v.size))
