"""Classification metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class EvalReport:
    """Per-class and macro precision/recall/F1.

    Macro values average only over classes with test support > 0.
    """

    labels: list[int]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    confusion: list[list[int]]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "confusion": self.confusion,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            **({"extra": self.extra} if self.extra else {}),
        }


def _ratio(num, den):
    return num / den if den else 0.0


def classification_report(gold: Sequence[int], pred: Sequence[int], n_labels: int) -> EvalReport:
    if len(gold) != len(pred):
        raise ValueError("gold and predicted label lists differ in length")
    if not len(gold):
        raise ValueError("cannot evaluate an empty split")
    confusion = np.zeros((n_labels, n_labels), dtype=np.int64)
    for g, p in zip(gold, pred):
        confusion[g, p] += 1
    tp = np.diag(confusion)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    precision = [_ratio(int(tp[i]), int(predicted[i])) for i in range(n_labels)]
    recall = [_ratio(int(tp[i]), int(support[i])) for i in range(n_labels)]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    active = [i for i in range(n_labels) if support[i] > 0]
    return EvalReport(
        labels=list(range(n_labels)),
        precision=precision,
        recall=recall,
        f1=f1,
        support=[int(s) for s in support],
        confusion=confusion.tolist(),
        macro_precision=float(np.mean([precision[i] for i in active])),
        macro_recall=float(np.mean([recall[i] for i in active])),
        macro_f1=float(np.mean([f1[i] for i in active])),
    )
