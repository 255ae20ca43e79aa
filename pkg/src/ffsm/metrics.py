"""Confusion-matrix metrics and ROC analysis."""
import csv
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateInputError


def _labels(labels):
    y = np.asarray(labels).reshape(-1)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Metrics:
    """Accuracy, precision, recall and F1; ``None`` marks a zero denominator."""
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self):
        return asdict(self)


def confusion(scores, labels, threshold=0.5):
    """Counts with a sample called positive when its score exceeds ``threshold``."""
    y = _labels(labels)
    pred = np.asarray(scores, dtype=np.float64).reshape(-1) > threshold
    if pred.shape != y.shape:
        raise ValueError(f"{pred.size} scores for {y.size} labels")
    pos = y == 1
    return ConfusionMatrix(int((pred & pos).sum()), int((~pred & ~pos).sum()),
                           int((pred & ~pos).sum()), int((~pred & pos).sum()))


def metrics(cm):
    n = cm.total
    accuracy = (cm.tp + cm.tn) / n if n else None
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, precision, recall, f1)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def roc_auc(scores, labels):
    """ROC points over every distinct score and the trapezoidal area beneath them.

    Equal scores form a single threshold step, so ties contribute a diagonal
    segment (half credit).  The false positive rate is FP / (FP + TN), i.e.
    one minus specificity.
    """
    y = _labels(labels)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUC is undefined when only one class is present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), y.size - 1]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    # Integer trapezoid sum, divided once, keeps the area exact up to one rounding.
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * n_pos * n_neg)
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(thresholds, fp / n_neg, tp / n_pos, auc)


def evaluate_scores(scores, labels, threshold=0.5):
    """Metric bundle for one subset: counts, A/P/R/F and AUC when defined."""
    cm = confusion(scores, labels, threshold)
    out = {"confusion": asdict(cm), **metrics(cm).to_dict()}
    try:
        out["auc"] = roc_auc(scores, labels).auc
    except DegenerateInputError:
        out["auc"] = None
    return out
