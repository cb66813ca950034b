"""Evaluation measures: CCC, F1, accuracy and mean confusion-matrix diagonal."""

from __future__ import annotations

import warnings

import numpy as np

from .config import N_EXPRESSIONS
from .losses import ccc

ccc_metric = ccc


class UndefinedMetricWarning(RuntimeWarning):
    pass


def _binary(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(bool)


def f1_binary(predictions, targets) -> float:
    """F1 of one binary label; 0.0 with a warning when P + R = 0."""
    p = _binary(predictions, "predictions").ravel()
    t = _binary(targets, "targets").ravel()
    if p.shape != t.shape:
        raise ValueError(f"f1: lengths {p.size} and {t.size} differ")
    tp = np.count_nonzero(p & t)
    fp = np.count_nonzero(p & ~t)
    fn = np.count_nonzero(~p & t)
    if tp == 0:
        warnings.warn("f1: precision + recall is zero", UndefinedMetricWarning, stacklevel=2)
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def f1(predictions, targets, average: str = "macro") -> float:
    """F1 over binary labels.

    1-D inputs give plain binary F1.  For n x K label matrices ``macro``
    averages the per-column scores and ``micro`` pools the counts.
    """
    p = np.asarray(predictions)
    t = np.asarray(targets)
    if p.shape != t.shape:
        raise ValueError(f"f1: shapes {p.shape} and {t.shape} differ")
    if p.ndim == 1:
        return f1_binary(p, t)
    if average == "micro":
        return f1_binary(p.ravel(), t.ravel())
    if average != "macro":
        raise ValueError(f"average must be 'macro' or 'micro', got {average!r}")
    return float(np.mean([f1_binary(p[:, k], t[:, k]) for k in range(p.shape[1])]))


def f1_multiclass(pred_classes, true_classes, n_classes: int = N_EXPRESSIONS) -> float:
    """Macro F1 over one-vs-rest indicators of the classes seen in either input."""
    p = np.asarray(pred_classes, dtype=np.intp)
    t = np.asarray(true_classes, dtype=np.intp)
    if p.shape != t.shape:
        raise ValueError(f"f1: lengths {p.size} and {t.size} differ")
    seen = np.union1d(p, t)
    eye = np.eye(n_classes, dtype=int)[:, seen]
    return f1(eye[p], eye[t], average="macro")


def accuracy(pred_classes, true_classes) -> float:
    p = np.asarray(pred_classes)
    t = np.asarray(true_classes)
    if p.shape != t.shape:
        raise ValueError(f"accuracy: lengths {p.size} and {t.size} differ")
    if p.size == 0:
        raise ValueError("accuracy of an empty input")
    return float(np.count_nonzero(p == t) / p.size)


def confusion_matrix(true_classes, pred_classes, n_classes: int = N_EXPRESSIONS) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t = np.asarray(true_classes, dtype=np.intp)
    p = np.asarray(pred_classes, dtype=np.intp)
    if t.shape != p.shape:
        raise ValueError("confusion_matrix: lengths differ")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def mean_diagonal(cm, strict: bool = False) -> float:
    """Mean per-class recall (diagonal of the row-normalized matrix).

    Rows without samples are skipped with a warning, or raise when
    ``strict``.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    totals = cm.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        if strict:
            raise ValueError(f"classes without samples: {empty.tolist()}")
        warnings.warn(f"classes without samples skipped: {empty.tolist()}", UndefinedMetricWarning, stacklevel=2)
    keep = totals > 0
    if not np.any(keep):
        raise ValueError("confusion matrix is empty")
    return float(np.mean(np.diag(cm)[keep] / totals[keep]))
