"""Classification metrics over a confusion matrix: overall accuracy,
average per-class recall, and Cohen's kappa."""

import numpy as np

from .errors import DimensionError, MetricError


class ConfusionMatrix:
    """C x C integer counts; rows index the true class, columns the
    predicted class."""

    def __init__(self, num_classes, counts=None):
        if num_classes < 1:
            raise DimensionError("need at least one class")
        self.num_classes = int(num_classes)
        if counts is None:
            self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_classes, num_classes):
                raise DimensionError(
                    f"counts shape {counts.shape} does not match C={num_classes}"
                )
            if (counts < 0).any():
                raise ValueError("confusion counts must be non-negative")
            self.counts = counts.copy()

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, true_label, pred_label):
        c = self.num_classes
        if not (0 <= true_label < c and 0 <= pred_label < c):
            raise IndexError(f"label out of range [0, {c})")
        self.counts[true_label, pred_label] += 1
        return self

    @classmethod
    def from_predictions(cls, num_classes, true_labels, pred_labels):
        cm = cls(num_classes)
        true_labels = np.asarray(true_labels)
        pred_labels = np.asarray(pred_labels)
        if true_labels.shape != pred_labels.shape:
            raise DimensionError("label arrays must have equal length")
        for t, p in zip(true_labels.tolist(), pred_labels.tolist()):
            cm.accumulate(t, p)
        return cm


def overall_accuracy(cm):
    """trace / total."""
    total = cm.total
    if total == 0:
        raise ZeroDivisionError("empty confusion matrix")
    return float(np.trace(cm.counts) / total)


def average_accuracy(cm):
    """Mean over classes of per-class recall counts[k][k] / rowsum[k]."""
    row_sums = cm.counts.sum(axis=1)
    empty = np.flatnonzero(row_sums == 0)
    if empty.size:
        raise MetricError(f"class {int(empty[0])} has no samples")
    recalls = np.diag(cm.counts) / row_sums
    return float(recalls.mean())


def cohen_kappa(cm):
    """(p_o - p_e) / (1 - p_e) with chance agreement p_e from the
    marginals; 0 for the degenerate p_e == 1 case."""
    total = cm.total
    if total == 0:
        raise ZeroDivisionError("empty confusion matrix")
    p_o = np.trace(cm.counts) / total
    row = cm.counts.sum(axis=1)
    col = cm.counts.sum(axis=0)
    p_e = float((row * col).sum() / (total * total))
    if p_e >= 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))
