"""Classification metrics and repetition aggregation."""
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError

METRICS = ("accuracy", "precision", "recall", "f1")


def confusion_matrix(predictions, labels, n_classes):
    """``M[t, p]`` counts samples of true class ``t`` predicted as ``p``."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise DimensionError(f"{len(predictions)} predictions for {len(labels)} labels")
    M = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(M, (labels, predictions), 1)
    return M


def _safe_ratio(num, den):
    out = np.zeros(len(num), dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(predictions, labels, n_classes):
    """Accuracy plus macro-averaged precision, recall and F1.

    Any 0/0 ratio (a class never predicted, or never present) counts as 0.
    """
    M = confusion_matrix(predictions, labels, n_classes)
    tp = np.diag(M).astype(np.float64)
    precision = _safe_ratio(tp, M.sum(axis=0))
    recall = _safe_ratio(tp, M.sum(axis=1))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    total = M.sum()
    return {
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
    }


@dataclass(frozen=True)
class Summary:
    mean: dict
    std: dict
    n: int


def aggregate(rows):
    """Mean and sample standard deviation (0 for a single repetition) of each metric."""
    if not rows:
        raise ValueError("nothing to aggregate")
    mean, std = {}, {}
    for key in METRICS:
        values = np.array([r[key] for r in rows], dtype=np.float64)
        mean[key] = float(values.mean())
        std[key] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return Summary(mean, std, len(rows))
