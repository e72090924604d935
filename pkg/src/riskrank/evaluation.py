"""Ranking AUROC and classification metrics (fractions; formatting is CLI's job)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .workload import fmt_float


@dataclass
class EvalReport:
    auroc: float | None
    accuracy: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    per_class_f1: np.ndarray
    confusion: np.ndarray
    zero_division_classes: list[int]

    def to_lines(self) -> list[str]:
        lines = ["metric\tvalue"]
        if self.auroc is not None:
            lines.append("auroc\t%s" % fmt_float(self.auroc))
        lines.append("accuracy\t%s" % fmt_float(self.accuracy))
        lines.append("precision_weighted\t%s" % fmt_float(self.precision_weighted))
        lines.append("recall_weighted\t%s" % fmt_float(self.recall_weighted))
        lines.append("f1_weighted\t%s" % fmt_float(self.f1_weighted))
        for c, v in enumerate(self.per_class_f1):
            lines.append("f1_class_%d\t%s" % (c, fmt_float(v)))
        lines.append("confusion\t" + ";".join(
            ",".join(str(int(v)) for v in row) for row in self.confusion
        ))
        return lines


def auroc(scores, positives) -> float:
    """P(random positive outscores random negative), ties at 0.5 (rank-sum)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC undefined: needs both positives and negatives")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    # midranks for ties
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion_matrix(true_labels, predicted_labels, num_classes: int) -> np.ndarray:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if len(t) != len(p):
        raise ValueError("label vectors must have equal length")
    for arr, name in ((t, "true"), (p, "predicted")):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError("%s label out of [0, %d)" % (name, num_classes))
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def classification_report(true_labels, predicted_labels, num_classes: int,
                          risk_auroc: float | None = None) -> EvalReport:
    cm = confusion_matrix(true_labels, predicted_labels, num_classes)
    n = cm.sum()
    support = cm.sum(axis=1).astype(np.float64)
    pred_count = cm.sum(axis=0).astype(np.float64)
    diag = np.diag(cm).astype(np.float64)
    zero_div = []
    precision = np.zeros(num_classes)
    recall = np.zeros(num_classes)
    for c in range(num_classes):
        if pred_count[c] > 0:
            precision[c] = diag[c] / pred_count[c]
        else:
            zero_div.append(c)
        if support[c] > 0:
            recall[c] = diag[c] / support[c]
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    wts = support / n if n else support
    return EvalReport(
        auroc=risk_auroc,
        accuracy=float(diag.sum() / n) if n else 0.0,
        precision_weighted=float(np.sum(wts * precision)),
        recall_weighted=float(np.sum(wts * recall)),
        f1_weighted=float(np.sum(wts * f1)),
        per_class_f1=f1,
        confusion=cm,
        zero_division_classes=zero_div,
    )
