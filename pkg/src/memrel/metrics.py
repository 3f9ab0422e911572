"""Accuracy, per-class precision/recall/F1, macro-F1, confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: np.ndarray
    count: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion.tolist(),
            "count": self.count,
        }


def compute_report(predictions, gold_sets, n_r: int) -> EvalReport:
    """Score predictions against (possibly multi-label) gold sets.

    A prediction matching any gold label counts as correct.  The confusion
    matrix uses the matched gold label as the row (first gold label when
    mispredicted).  For F1, a miss counts a false negative against every
    gold label and one false positive for the prediction.
    """
    predictions = list(predictions)
    gold_sets = [tuple(g) for g in gold_sets]
    if len(predictions) != len(gold_sets):
        raise ValueError("predictions and gold sets differ in length")
    confusion = np.zeros((n_r, n_r), dtype=np.int64)
    tp = np.zeros(n_r)
    fp = np.zeros(n_r)
    fn = np.zeros(n_r)
    correct = 0
    for pred, gold in zip(predictions, gold_sets):
        if pred in gold:
            correct += 1
            confusion[pred, pred] += 1
            tp[pred] += 1
        else:
            confusion[gold[0], pred] += 1
            fp[pred] += 1
            for g in gold:
                fn[g] += 1
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return EvalReport(
        accuracy=correct / len(predictions) if predictions else 0.0,
        macro_f1=float(f1.mean()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        confusion=confusion,
        count=len(predictions),
    )


def _safe_div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)
