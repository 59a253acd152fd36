"""Point-wise precision, recall and F1."""
from __future__ import annotations

import numpy as np

from ..core import DataError


def confusion(predictions, labels) -> tuple[int, int, int]:
    """``(tp, fp, fn)`` for binary vectors of equal length."""
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise DataError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    return int((p & y).sum()), int((p & ~y).sum()), int((~p & y).sum())


def prf1(predictions, labels) -> tuple[float, float, float]:
    """Precision, recall, F1; each is 0 where its denominator is 0."""
    tp, fp, fn = confusion(predictions, labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
