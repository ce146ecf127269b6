"""AUROC via rank statistics, macro one-vs-rest, accuracy."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ecgc.errors import SingleClass


def auroc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2.

    Computed from midranks: ``(R_pos - P(P+1)/2) / (P N)``.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"AUROC needs both classes (positives={n_pos}, negatives={n_neg})")
    # midranks are multiples of 1/2, so twice the rank sum is an exact integer
    twice_rank_sum = int(round(2.0 * rankdata(s, method="average")[y].sum()))
    twice_u = twice_rank_sum - n_pos * (n_pos + 1)
    return twice_u / (2.0 * n_pos * n_neg)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def per_class_auroc(probs: np.ndarray, labels, n_classes: int | None = None) -> list[float]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = n_classes or probs.shape[1]
    return [auroc(probs[:, c], labels == c) for c in range(n_classes)]


def macro_auroc(probs: np.ndarray, labels) -> float:
    return float(np.mean(per_class_auroc(probs, labels)))


def accuracy(probs: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(probs, axis=1) == labels))
