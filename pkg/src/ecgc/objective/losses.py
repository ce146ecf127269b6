"""Contrastive and cross-entropy losses as fused differentiable ops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ecgc.errors import LabelOutOfRange, MaskAsymmetry, NoPositive, ZeroVector
from ecgc.nn import ops
from ecgc.nn.tensor import Tensor, as_tensor

VARIANTS = ("sum_out", "mean_log")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    variant: str = "sum_out"
    stabilize: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def check_mask(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MaskAsymmetry(f"positive mask must be square, got {m.shape}")
    if not np.array_equal(m, m.T):
        r, c = np.argwhere(m != m.T)[0]
        raise MaskAsymmetry(f"mask[{r}, {c}] != mask[{c}, {r}]")
    if m.diagonal().any():
        raise MaskAsymmetry(f"mask diagonal must be false (row {int(np.flatnonzero(m.diagonal())[0])})")
    empty = np.flatnonzero(~m.any(axis=1))
    if empty.size:
        raise NoPositive(int(empty[0]))
    return m


def _log_sum_exp(logits: np.ndarray, where: np.ndarray, stabilize: bool) -> np.ndarray:
    """Row-wise log of the masked sum of exponentials."""
    if not stabilize:
        with np.errstate(over="ignore", divide="ignore"):
            return np.log(np.where(where, np.exp(logits), 0.0).sum(axis=1))
    peak = np.where(where, logits, -np.inf).max(axis=1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(over="ignore"):
        return peak[:, 0] + np.log(np.where(where, np.exp(logits - peak), 0.0).sum(axis=1))


def _row_terms(s: np.ndarray, m: np.ndarray, config: LossConfig):
    """Per-row losses plus the two softmax weightings the gradient needs."""
    off = ~np.eye(m.shape[0], dtype=bool)
    logits = s / config.temperature
    log_den = _log_sum_exp(logits, off, config.stabilize)
    with np.errstate(over="ignore", under="ignore"):
        p_all = np.where(off, np.exp(logits - log_den[:, None]), 0.0)
    if config.variant == "sum_out":
        log_num = _log_sum_exp(logits, m, config.stabilize)
        with np.errstate(over="ignore", under="ignore"):
            p_pos = np.where(m, np.exp(logits - log_num[:, None]), 0.0)
        per_row = log_den - log_num
    else:
        p_pos = m / m.sum(axis=1, keepdims=True)
        per_row = log_den - np.where(m, logits, 0.0).sum(axis=1) / m.sum(axis=1)
    return per_row, p_all, p_pos


def per_anchor_loss(sim, mask, config: LossConfig = LossConfig()) -> np.ndarray:
    """The loss of each row of a similarity matrix, before averaging (no graph)."""
    m = check_mask(mask)
    s = sim.data if isinstance(sim, Tensor) else np.asarray(sim)
    return _row_terms(s.astype(np.float64), m, config)[0]


def contrastive_from_similarity(sim: Tensor, mask, config: LossConfig = LossConfig()) -> Tensor:
    """Multi-positive contrastive loss on a precomputed similarity matrix [N, N].

    Row i contributes ``-log(sum_{P(i)} e^{s/t} / sum_{j != i} e^{s/t})``
    (``sum_out``) or the mean over positives of the per-positive log ratio
    (``mean_log``); rows are averaged.
    """
    m = check_mask(mask)
    n = m.shape[0]
    per_row, p_all, p_pos = _row_terms(sim.data.astype(np.float64), m, config)
    loss = np.asarray(per_row.mean(), dtype=sim.dtype)

    def backward(g):
        return ((float(g) / (n * config.temperature)) * (p_all - p_pos)).astype(sim.dtype),

    return Tensor.from_op(loss, (sim,), backward, "contrastive_loss")


def contrastive_loss(embeddings, positive_mask, config: LossConfig = LossConfig()) -> Tensor:
    """Contrastive loss of embeddings [2B, d] under cosine similarity."""
    z = as_tensor(embeddings)
    return contrastive_from_similarity(ops.cosine_similarity_matrix(z), positive_mask, config)


def cross_entropy(logits, labels) -> Tensor:
    """Mean ``-log softmax(logits)[label]`` over rows of logits [n, C]."""
    x = as_tensor(logits)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise LabelOutOfRange(f"need logits [n, C] and n labels, got {x.shape} and {y.shape}")
    n, c = x.shape
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= c):
        raise LabelOutOfRange(f"labels must be integers in [0, {c})")
    z = x.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, y].mean(), dtype=x.dtype)

    def backward(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return ((float(g) / n) * d).astype(x.dtype),

    return Tensor.from_op(loss, (x,), backward, "cross_entropy")
