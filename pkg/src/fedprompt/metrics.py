"""Evaluation metrics: top-1 accuracy and per-class F1 aggregates.

Both macro-F1 (unweighted class mean) and weighted-F1 (support-weighted)
are computed, since either reading of a two-metric benchmark is defensible
under class imbalance; the experiment CSV carries both.
"""

from __future__ import annotations

import numpy as np

from fedprompt.errors import ShapeError


def confusion_matrix(preds, labels, k: int) -> np.ndarray:
    """(k, k) count matrix, rows = true class, cols = predicted class."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ShapeError("preds and labels must align")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ShapeError("cannot score an empty prediction set")
    return float((preds == labels).mean())


def accuracy_from_confusion(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ShapeError("empty confusion matrix")
    return float(np.trace(cm) / total)


def _per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0).astype(np.float64)
    true_pos = cm.sum(axis=1).astype(np.float64)
    denom = pred_pos + true_pos
    # a class never predicted and never present contributes F1 = 0
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / denom, 0.0)
    return f1


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean over classes of 2PR/(P+R)."""
    if cm.shape[0] < 2:
        raise ShapeError("need at least two classes")
    return float(_per_class_f1(cm).mean())


def weighted_f1(cm: np.ndarray) -> float:
    """Support-weighted mean of per-class F1."""
    if cm.shape[0] < 2:
        raise ShapeError("need at least two classes")
    support = cm.sum(axis=1).astype(np.float64)
    total = support.sum()
    if total == 0:
        return 0.0
    return float((_per_class_f1(cm) * support).sum() / total)
