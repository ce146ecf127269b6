"""Finite-difference gradient checking shared by the nn and acceptance tests."""

from __future__ import annotations

import numpy as np

from ecgc.nn import ops
from ecgc.nn.tensor import Tensor
from ecgc.objective.losses import LossConfig, contrastive_loss, cross_entropy

EPS = 1e-3


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, inputs: list[np.ndarray], eps: float = EPS) -> float:
    """Worst relative error between autodiff and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor. Inputs are float64.
    """
    tensors = [Tensor(x.astype(np.float64), requires_grad=True) for x in inputs]
    fn(tensors).backward()
    worst = 0.0
    for k, x in enumerate(inputs):
        x = x.astype(np.float64)
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            vals = []
            for sign in (1.0, -1.0):
                probe = [a.astype(np.float64) for a in inputs]
                probe[k][idx] += sign * eps
                vals.append(fn([Tensor(a) for a in probe]).item())
            numeric[idx] = (vals[0] - vals[1]) / (2 * eps)
        analytic = tensors[k].grad if tensors[k].grad is not None else np.zeros_like(x)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _contract(out: Tensor, w: np.ndarray) -> Tensor:
    """Scalar <out, w> so non-scalar ops can be checked."""
    return ops.sum(ops.mul(out, Tensor(w)))


def random_case(op: str, rng: np.random.Generator):
    """A (fn, inputs) pair for one random configuration of ``op``."""
    if op == "conv1d":
        b, cin, cout, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5)
        stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, 3))
        length = int(rng.integers(k, k + 8))
        lout = (length + 2 * pad - k) // stride + 1
        w = rng.standard_normal((b, cout, lout))
        inputs = [rng.standard_normal((b, cin, length)), rng.standard_normal((cout, cin, k)), rng.standard_normal(cout)]
        return (lambda t: _contract(ops.conv1d(t[0], t[1], t[2], stride=stride, padding=pad), w)), inputs
    if op == "layer_norm":
        b, c, length = rng.integers(1, 3), rng.integers(1, 4), rng.integers(2, 7)
        w = rng.standard_normal((b, c, length))
        x = rng.standard_normal((b, c, length))
        # central differences need the step to be small against each example's spread
        while x.reshape(b, -1).std(axis=1).min() < 100 * EPS:
            x = rng.standard_normal((b, c, length))
        inputs = [x * rng.uniform(0.5, 3), rng.standard_normal(c), rng.standard_normal(c)]
        return (lambda t: _contract(ops.layer_norm(t[0], t[1], t[2]), w)), inputs
    if op == "global_avg_pool":
        b, c, length = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 7)
        w = rng.standard_normal((b, c))
        return (lambda t: _contract(ops.global_avg_pool(t[0]), w)), [rng.standard_normal((b, c, length))]
    if op == "linear":
        n, i, o = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 5)
        w = rng.standard_normal((n, o))
        inputs = [rng.standard_normal((n, i)), rng.standard_normal((i, o)), rng.standard_normal(o)]
        return (lambda t: _contract(ops.linear(t[0], t[1], t[2]), w)), inputs
    if op == "cosine_similarity_matrix":
        n, d = rng.integers(2, 6), rng.integers(2, 5)
        w = rng.standard_normal((n, n))
        return (lambda t: _contract(ops.cosine_similarity_matrix(t[0]), w)), [rng.standard_normal((n, d))]
    if op == "contrastive_loss":
        b, d = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        groups = rng.integers(0, 2, b)
        rel = groups[:, None] == groups[None, :]
        mask = np.kron(rel, np.ones((2, 2), bool)) & ~np.eye(2 * b, dtype=bool)
        cfg = LossConfig(temperature=float(rng.uniform(0.2, 1.0)), variant=str(rng.choice(["sum_out", "mean_log"])))
        return (lambda t: contrastive_loss(t[0], mask, cfg)), [rng.standard_normal((2 * b, d))]
    if op == "cross_entropy":
        n, c = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        labels = rng.integers(0, c, n)
        return (lambda t: cross_entropy(t[0], labels)), [rng.standard_normal((n, c)) * 2]
    raise ValueError(op)


OPS = ("conv1d", "layer_norm", "global_avg_pool", "linear", "cosine_similarity_matrix", "contrastive_loss", "cross_entropy")
