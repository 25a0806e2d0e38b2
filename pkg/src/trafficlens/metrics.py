"""Confusion matrices and accuracy / precision / recall / F1 with macro averages."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyTestSet
from .forest import Forest
from .nn.model import ModelState, predict


@dataclass
class ConfusionMatrix:
    """counts[i, j] = samples of true class i predicted as class j."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.size == 0:
            raise EmptyTestSet("no samples to evaluate")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    class_names: list[str] = field(default_factory=list)
    support: list[int] = field(default_factory=list)
    # one-vs-rest (TP + TN) / total per class
    class_accuracy: list[float] = field(default_factory=list)

    def rows(self) -> list[dict]:
        names = self.class_names or [str(i) for i in range(len(self.precision))]
        return [dict(cls=n, precision=p, recall=r, f1=f, support=s)
                for n, p, r, f, s in zip(names, self.precision, self.recall, self.f1, self.support)]

    def format(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"{'class':<20} {'PRE':>8} {'REC':>8} {'F1':>8} {'support':>8}")
        for row in self.rows():
            lines.append(f"{row['cls']:<20} {row['precision']:>8.4f} {row['recall']:>8.4f} "
                         f"{row['f1']:>8.4f} {row['support']:>8d}")
        lines.append(f"{'macro':<20} {self.macro_precision:>8.4f} {self.macro_recall:>8.4f} {self.macro_f1:>8.4f}")
        lines.append(f"accuracy {self.accuracy:.4f}")
        return "\n".join(lines)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def metrics_from_confusion(cm: ConfusionMatrix, class_names: Sequence[str] = ()) -> MetricsReport:
    """accuracy = trace / total; per class P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R), 0 on zero denominators."""
    if cm.total == 0:
        raise EmptyTestSet("empty confusion matrix")
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(tp.sum() / cm.total),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        class_names=list(class_names),
        support=cm.counts.sum(axis=1).astype(int).tolist(),
        class_accuracy=((tp + cm.tn) / cm.total).tolist(),
    )


def evaluate_predictions(y_true, y_pred, n_classes: int, class_names: Sequence[str] = ()
                         ) -> tuple[ConfusionMatrix, MetricsReport]:
    cm = ConfusionMatrix.from_predictions(y_true, y_pred, n_classes)
    return cm, metrics_from_confusion(cm, class_names)


def evaluate(model, X: np.ndarray, y: Sequence[int], class_names: Sequence[str] = ()
             ) -> tuple[ConfusionMatrix, MetricsReport]:
    """Evaluate a CNN ModelState (X = image tensors) or a Forest (X = feature rows)."""
    if len(y) == 0:
        raise EmptyTestSet("no samples to evaluate")
    if isinstance(model, ModelState):
        _, pred = predict(model, X)
        n = model.config.n_classes
    elif isinstance(model, Forest):
        pred = model.predict(X)
        n = model.n_classes
    else:
        raise TypeError(f"cannot evaluate {type(model).__name__}")
    return evaluate_predictions(y, pred, n, class_names)
