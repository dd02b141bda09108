"""Sigmoid scoring head over a classifier bank plus retrieval metrics.

Scores are per-class sigmoids of a scaled cosine similarity with a learnable
bias (no softmax across classes: annotations are federated, so classes are
scored independently).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import ClassifierBank
from .errors import ValidationError


@dataclass
class ScoringHead:
    projection: np.ndarray | None = None  # (feature_dim, bank_dim) or None for identity
    logit_scale: float = 50.0
    bias: float = -2.0

    def __post_init__(self):
        if self.logit_scale <= 0:
            raise ValidationError("logit scale must be positive")
        if self.projection is not None:
            self.projection = np.asarray(self.projection, dtype=np.float64)
            if self.projection.ndim != 2:
                raise ValidationError("projection must be a 2-D matrix")


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def score_queries(features: np.ndarray, bank: ClassifierBank,
                  head: ScoringHead | None = None) -> tuple[np.ndarray, list[str]]:
    """Score each query feature against every classifier.

    Returns the (queries x classes) score matrix and the class ids in column
    order (sorted lexicographically).
    """
    head = head or ScoringHead()
    q = np.asarray(features, dtype=np.float64)
    if q.ndim == 1:
        q = q.reshape(1, -1)
    if q.ndim != 2 or q.shape[0] == 0:
        raise ValidationError("queries must form a nonempty (n, feature_dim) matrix")
    if head.projection is not None:
        if q.shape[1] != head.projection.shape[0]:
            raise ValidationError(
                f"feature dim {q.shape[1]} incompatible with projection {head.projection.shape}")
        q = q @ head.projection
    classifiers, class_ids = bank.matrix()
    w = classifiers.astype(np.float64)
    if q.shape[1] != w.shape[1]:
        raise ValidationError(
            f"projected feature dim {q.shape[1]} != bank dimension {w.shape[1]}")
    q_norm = np.linalg.norm(q, axis=1, keepdims=True)
    w_norm = np.linalg.norm(w, axis=1, keepdims=True)
    if np.any(q_norm == 0.0) or np.any(w_norm == 0.0):
        raise ValidationError("cosine similarity undefined for zero vectors")
    cosine = (q / q_norm) @ (w / w_norm).T
    return sigmoid(head.logit_scale * cosine + head.bias), class_ids


def evaluate_retrieval(scores: np.ndarray, true_labels: list[str],
                       class_ids: list[str]) -> dict[str, float]:
    """Top-1/top-5 accuracy; ties broken by lexicographic class id.

    ``class_ids`` gives the column order of ``scores`` and must be sorted so
    the tie rule is simply "first column wins".
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValidationError("score matrix must be nonempty")
    if len(true_labels) != s.shape[0]:
        raise ValidationError("one true label per query row is required")
    if len(class_ids) != s.shape[1]:
        raise ValidationError("one class id per score column is required")
    if sorted(class_ids) != list(class_ids):
        raise ValidationError("class columns must be sorted lexicographically")
    index = {cid: i for i, cid in enumerate(class_ids)}
    unknown = [lab for lab in true_labels if lab not in index]
    if unknown:
        raise ValidationError(f"labels not in bank: {sorted(set(unknown))[:5]}")
    top1 = 0
    top5 = 0
    for row, label in zip(s, true_labels):
        # stable sort on negated scores keeps lexicographic order among ties
        ranking = np.argsort(-row, kind="stable")
        target = index[label]
        rank = int(np.nonzero(ranking == target)[0][0])
        top1 += rank == 0
        top5 += rank < 5
    n = s.shape[0]
    return {"top1": top1 / n, "top5": top5 / n}
