"""Ranking and classification metrics with fixed tie conventions.

ROC-AUC counts tied scores as half-concordant; average precision uses step
interpolation over distinct thresholds; balanced accuracy is the mean
per-class recall over classes present in the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Metrics:
    roc_auc: float | None
    average_precision: float
    f1: float
    balanced_accuracy: float
    confusion: np.ndarray
    classes: tuple

    def to_json(self) -> dict:
        return {
            "roc_auc": self.roc_auc,
            "average_precision": self.average_precision,
            "f1": self.f1,
            "balanced_accuracy": self.balanced_accuracy,
            "classes": [str(c) for c in self.classes],
            "confusion": self.confusion.tolist(),
        }


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc_binary(y_true: np.ndarray, scores: np.ndarray) -> float | None:
    """Rank-statistic AUC; ties count one half. None if one class only."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=float)
    n_pos = int((y_true == 1).sum())
    n_neg = len(y_true) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    pos_rank_sum = ranks[y_true == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision_binary(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Step-interpolated area under the precision-recall curve."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=float)
    n_pos = int((y_true == 1).sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    y_sorted = y_true[order]
    s_sorted = scores[order]

    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    n = len(y_true)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp += int((y_sorted[i : j + 1] == 1).sum())
        fp += (j - i + 1) - int((y_sorted[i : j + 1] == 1).sum())
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def confusion_matrix(
    y_true: Sequence, y_pred: Sequence, classes: Sequence
) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        out[index[t], index[p]] += 1
    return out


def f1_macro_from_confusion(confusion: np.ndarray) -> float:
    scores = []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def balanced_accuracy_from_confusion(confusion: np.ndarray) -> float:
    recalls = []
    for c in range(confusion.shape[0]):
        support = confusion[c, :].sum()
        if support > 0:
            recalls.append(confusion[c, c] / support)
    return float(np.mean(recalls)) if recalls else math.nan


def evaluate(scores: np.ndarray, y_true: Sequence, classes: Sequence) -> Metrics:
    """Score predictions against truth.

    Binary tasks pass 1-D positive-class scores and two classes; the event
    task passes an (n, K) score matrix whose columns follow `classes`.
    ROC-AUC and AP are macro-averaged one-vs-rest; predicted classes are the
    argmax (0.5 threshold for binary).
    """
    scores = np.asarray(scores, dtype=float)
    classes = tuple(classes)
    y_true = list(y_true)
    if scores.ndim == 1:
        if len(classes) != 2:
            raise ValueError("1-D scores require exactly 2 classes")
        score_cols = np.column_stack([1.0 - scores, scores])
    else:
        if scores.shape[1] != len(classes):
            raise ValueError("score columns must match classes")
        score_cols = scores

    aucs, aps = [], []
    for ci in range(len(classes)):
        y_bin = np.array([1 if v == classes[ci] else 0 for v in y_true])
        auc = roc_auc_binary(y_bin, score_cols[:, ci])
        if auc is not None:
            aucs.append(auc)
        aps.append(average_precision_binary(y_bin, score_cols[:, ci]))
    # AUC is undefined unless every class boundary is testable.
    roc = float(np.mean(aucs)) if len(aucs) == len(classes) else None

    if scores.ndim == 1:
        y_pred = [classes[1] if s >= 0.5 else classes[0] for s in scores]
    else:
        y_pred = [classes[i] for i in score_cols.argmax(axis=1)]
    confusion = confusion_matrix(y_true, y_pred, classes)
    return Metrics(
        roc_auc=roc,
        average_precision=float(np.mean(aps)),
        f1=f1_macro_from_confusion(confusion),
        balanced_accuracy=balanced_accuracy_from_confusion(confusion),
        confusion=confusion,
        classes=classes,
    )
