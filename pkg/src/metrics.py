"""Evaluation metrics for sentiment classification and regression."""

import csv
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .numkit import ShapeError


class ZeroVarianceError(ValueError):
    """Pearson correlation is undefined for a constant input."""


def _pair(preds: Sequence, labels: Sequence):
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ShapeError(f"{p.shape[0]} predictions for {y.shape[0]} labels")
    if p.size == 0:
        raise ValueError("metrics need at least one prediction")
    return p, y


def confusion_matrix(preds: Sequence[int], labels: Sequence[int], n_class: int) -> np.ndarray:
    """Counts with rows indexed by the true class and columns by the prediction."""
    p, y = _pair(preds, labels)
    p = p.astype(np.int64)
    y = y.astype(np.int64)
    for name, arr in (("prediction", p), ("label", y)):
        bad = arr[(arr < 0) | (arr >= n_class)]
        if bad.size:
            raise ValueError(f"{name} {int(bad[0])} out of range [0, {n_class})")
    cm = np.zeros((n_class, n_class), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def _n_class(p: np.ndarray, y: np.ndarray) -> int:
    return int(max(p.max(), y.max())) + 1


def per_class_accuracy(cm: np.ndarray) -> np.ndarray:
    """Recall per true class; 0 for classes without support."""
    support = cm.sum(axis=1)
    diag = np.diag(cm).astype(np.float64)
    return np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class; 0 whenever precision or recall is undefined."""
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    denom = predicted + support
    return np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def weighted_accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Support-weighted mean of per-class recall (equals fraction correct)."""
    p, y = _pair(preds, labels)
    cm = confusion_matrix(p, y, _n_class(p, y))
    support = cm.sum(axis=1)
    return float(np.sum(per_class_accuracy(cm) * support) / support.sum())


def macro_accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Unweighted mean of per-class recall over classes present in ``labels``."""
    p, y = _pair(preds, labels)
    cm = confusion_matrix(p, y, _n_class(p, y))
    present = cm.sum(axis=1) > 0
    return float(np.mean(per_class_accuracy(cm)[present]))


def weighted_f1(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Per-class F1 averaged with true-class support weights."""
    p, y = _pair(preds, labels)
    cm = confusion_matrix(p, y, _n_class(p, y))
    support = cm.sum(axis=1)
    return float(np.sum(per_class_f1(cm) * support) / support.sum())


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ShapeError(f"pearson_r: lengths {xa.shape[0]} and {ya.shape[0]} differ")
    if xa.size < 2:
        raise ValueError("pearson_r needs at least two points")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = float(np.sqrt(dx @ dx))
    sy = float(np.sqrt(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVarianceError("pearson_r: zero variance input")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def mean_absolute_error(preds: Sequence[float], targets: Sequence[float]) -> float:
    p, z = _pair(preds, targets)
    return float(np.mean(np.abs(p.astype(np.float64) - z.astype(np.float64))))


def classification_record(
    preds: Sequence[int],
    labels: Sequence[int],
    n_class: int,
    label_names: Optional[Sequence[str]] = None,
) -> Dict[str, Any]:
    """Structured metric record for one evaluation pass."""
    p, y = _pair(preds, labels)
    cm = confusion_matrix(p, y, n_class)
    names = list(label_names) if label_names else [str(c) for c in range(n_class)]
    acc = per_class_accuracy(cm)
    f1 = per_class_f1(cm)
    support = cm.sum(axis=1)
    return {
        "utterances": int(p.size),
        "weighted_accuracy": weighted_accuracy(p, y),
        "macro_accuracy": macro_accuracy(p, y),
        "weighted_f1": weighted_f1(p, y),
        "per_class": {
            names[c]: {
                "accuracy": float(acc[c]),
                "f1": float(f1[c]),
                "support": int(support[c]),
            }
            for c in range(n_class)
        },
    }


def regression_record(preds: Sequence[float], targets: Sequence[float]) -> Dict[str, Any]:
    p, z = _pair(preds, targets)
    try:
        r: Optional[float] = pearson_r(p, z)
    except ZeroVarianceError:
        r = None
    return {
        "utterances": int(p.size),
        "pearson_r": r,
        "mae": mean_absolute_error(p, z),
    }


def write_confusion_csv(
    cm: np.ndarray, path: Union[str, Path], label_names: Optional[List[str]] = None
) -> Path:
    """Header row of label names, then one row of counts per true class."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = label_names or [str(c) for c in range(cm.shape[0])]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for row in cm:
            writer.writerow([int(x) for x in row])
    return path
