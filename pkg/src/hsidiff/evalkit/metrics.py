"""Confusion matrix, overall/average accuracy and Cohen's kappa.

Ratios are formed in exact rational arithmetic and rounded once, so results
do not depend on summation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class_acc: np.ndarray  # NaN for classes without test samples
    oa: float
    aa: float
    kappa: float
    n_test: int
    class_names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "n_test": self.n_test,
            "per_class_acc": [None if np.isnan(a) else float(a) for a in self.per_class_acc],
            "support": self.confusion.sum(axis=1).tolist(),
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
        }


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted; class ids run 1..n_classes."""
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise MetricsError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted labels")
    for name, y in (("true", y_true), ("predicted", y_pred)):
        if y.size and (y.min() < 1 or y.max() > n_classes):
            raise MetricsError(f"{name} labels must lie in [1, {n_classes}]")
    flat = (y_true - 1) * n_classes + (y_pred - 1)
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def metrics(confusion) -> dict:
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise MetricsError(f"confusion matrix must be square, got shape {cm.shape}")
    if (cm < 0).any():
        raise MetricsError("confusion matrix has negative entries")
    cm = [[int(v) for v in row] for row in cm]
    n = len(cm)
    total = sum(map(sum, cm))
    if total == 0:
        raise MetricsError("confusion matrix is all zeros")
    rows = [sum(r) for r in cm]
    cols = [sum(cm[i][j] for i in range(n)) for j in range(n)]
    diag = [cm[i][i] for i in range(n)]

    p_o = Fraction(sum(diag), total)
    per_class = [Fraction(diag[i], rows[i]) if rows[i] else None for i in range(n)]
    present = [a for a in per_class if a is not None]
    aa = sum(present, Fraction(0)) / len(present)
    p_e = Fraction(sum(r * c for r, c in zip(rows, cols)), total * total)
    # p_e == 1 only when every sample sits in one diagonal cell
    kappa = Fraction(1) if p_e == 1 else (p_o - p_e) / (1 - p_e)
    return {
        "oa": float(p_o),
        "aa": float(aa),
        "kappa": float(kappa),
        "per_class_acc": np.array([np.nan if a is None else float(a) for a in per_class]),
    }


def evaluate(y_true, y_pred, n_classes: int, class_names=None) -> EvalReport:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    m = metrics(cm)
    return EvalReport(
        confusion=cm,
        per_class_acc=m["per_class_acc"],
        oa=m["oa"],
        aa=m["aa"],
        kappa=m["kappa"],
        n_test=int(cm.sum()),
        class_names=list(class_names or [f"class_{i}" for i in range(1, n_classes + 1)]),
    )
