"""Classification metrics with an explicit length-slice breakdown.

Per-class F1 for a class that is never predicted and never true is defined
as 0 and still averaged into the macro mean; skipping such classes would
inflate scores exactly on the imbalanced tasks these metrics exist for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class ClassStats:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    n: int
    accuracy: float
    macro_f1: float
    binary_f1: float | None
    recall_at_k: float | None
    k: int | None
    per_class: list[ClassStats] = field(default_factory=list)
    slice_long: "MetricsReport | None" = None

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "binary_f1": self.binary_f1,
            "recall_at_k": self.recall_at_k,
            "k": self.k,
            "per_class": [vars(c) for c in self.per_class],
        }
        if self.slice_long is not None:
            d["slice_long"] = self.slice_long.to_dict()
        return d


def _safe_div(a: float, b: float) -> float:
    return a / b if b > 0 else 0.0


def _core_metrics(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int,
                  scores: np.ndarray | None, k: int | None,
                  positive_class: int | None) -> MetricsReport:
    n = y_true.shape[0]
    per_class = []
    f1s = []
    for c in range(n_classes):
        tp = int(((y_pred == c) & (y_true == c)).sum())
        fp = int(((y_pred == c) & (y_true != c)).sum())
        fn = int(((y_pred != c) & (y_true == c)).sum())
        prec = _safe_div(tp, tp + fp)
        rec = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * prec * rec, prec + rec)
        per_class.append(ClassStats(precision=prec, recall=rec, f1=f1,
                                    support=int((y_true == c).sum())))
        f1s.append(f1)
    accuracy = _safe_div(int((y_pred == y_true).sum()), n)
    macro_f1 = float(np.mean(f1s)) if f1s else 0.0
    binary_f1 = per_class[positive_class].f1 if positive_class is not None else None
    recall_at_k = None
    if scores is not None and k is not None:
        top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        recall_at_k = _safe_div(int((top == y_true[:, None]).any(axis=1).sum()), n)
    return MetricsReport(n=n, accuracy=accuracy, macro_f1=macro_f1, binary_f1=binary_f1,
                         recall_at_k=recall_at_k, k=k, per_class=per_class)


def evaluate(scores: np.ndarray | None, labels, n_classes: int | None = None,
             k: int | None = None, positive_class: int | None = None,
             predictions: np.ndarray | None = None,
             lengths: np.ndarray | None = None) -> MetricsReport:
    """Score a batch of predictions.

    Either ``scores`` (one row of class scores per instance; argmax gives the
    prediction and enables recall@k) or hard ``predictions`` must be given.
    ``lengths`` switches on the long-sequence slice: instances whose length
    exceeds the corpus median, reported as a nested sub-report.
    """
    y_true = np.asarray(labels, dtype=np.int64)
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != y_true.shape[0]:
            raise ShapeError(f"scores shape {scores.shape} does not match {y_true.shape[0]} labels")
        if n_classes is None:
            n_classes = scores.shape[1]
        elif n_classes != scores.shape[1]:
            raise ConfigError(f"n_classes={n_classes} but scores have {scores.shape[1]} columns")
        y_pred = np.argmax(scores, axis=1)
    elif predictions is not None:
        y_pred = np.asarray(predictions, dtype=np.int64)
        if y_pred.shape != y_true.shape:
            raise ShapeError(f"predictions shape {y_pred.shape} does not match labels {y_true.shape}")
        if n_classes is None:
            n_classes = int(max(y_true.max(initial=0), y_pred.max(initial=0))) + 1
        if k is not None:
            raise ConfigError("recall@k needs score vectors, not hard predictions")
    else:
        raise ConfigError("pass either scores or predictions")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes):
        raise ConfigError(f"labels outside [0, {n_classes})")
    if k is not None and not (1 <= k <= n_classes):
        raise ConfigError(f"k={k} outside [1, n_classes={n_classes}]")
    if positive_class is not None and not (0 <= positive_class < n_classes):
        raise ConfigError(f"positive_class={positive_class} outside [0, {n_classes})")

    report = _core_metrics(y_true, y_pred, n_classes, scores, k, positive_class)
    if lengths is not None:
        lengths = np.asarray(lengths)
        if lengths.shape != y_true.shape:
            raise ShapeError(f"lengths shape {lengths.shape} does not match labels {y_true.shape}")
        long_mask = lengths > np.median(lengths)
        if long_mask.any():
            report.slice_long = _core_metrics(
                y_true[long_mask], y_pred[long_mask], n_classes,
                scores[long_mask] if scores is not None else None, k, positive_class)
    return report
