"""Differentiable operations over :class:`~ecgc.nn.tensor.Tensor`.

Only the ops the encoder, probe and losses need. Each op computes its output
with numpy (or the compiled kernels for convolution and normalization) and registers a closure
returning one gradient per parent.
"""

from __future__ import annotations

import numpy as np

from ecgc import kernels
from ecgc.errors import ShapeMismatch, ZeroVector
from ecgc.nn.tensor import Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor.from_op(a.data @ b.data, (a, b), backward, "matmul")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor.from_op(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), backward, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor.from_op(a.data.reshape(shape), (a,), backward, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(a.data * mask, (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor.from_op(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor.from_op(out, (a,), backward, "log")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` for x [N, D_in], weight [D_in, D_out]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatch(f"linear: bias {bias.shape} vs output width {weight.shape[1]}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor.from_op(out, parents, backward, "linear")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B, C_in, L] with weight [C_out, C_in, K]."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeMismatch(f"conv1d expects 3-D input and kernel, got {x.shape} and {weight.shape}")
    b, c_in, length = x.shape
    c_out, wc_in, k = weight.shape
    if wc_in != c_in:
        raise ShapeMismatch(f"conv1d: input has {c_in} channels, kernel expects {wc_in}")
    if stride < 1 or padding < 0:
        raise ShapeMismatch(f"conv1d: invalid stride {stride} / padding {padding}")
    l_out = (length + 2 * padding - k) // stride + 1
    if l_out < 1:
        raise ShapeMismatch(f"conv1d: output length {l_out} < 1 for L={length}, K={k}, stride={stride}")
    dtype = np.result_type(x.dtype, weight.dtype)
    xd = np.ascontiguousarray(x.data, dtype=dtype)
    wd = np.ascontiguousarray(weight.data, dtype=dtype)
    out, cols = kernels.conv1d_forward(xd, wd, stride, padding)
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeMismatch(f"conv1d: bias {bias.shape} vs {c_out} output channels")
        out += bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        dx, dw = kernels.conv1d_backward(g, wd, cols, length, stride, padding, need_input=x.requires_grad)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return Tensor.from_op(out, parents, backward, "conv1d")


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-example normalization of x [B, C, L] over (C, L), then per-channel affine.

    Statistics never mix examples, so outputs do not depend on batch
    composition.
    """
    if x.ndim != 3 or scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeMismatch(f"layer_norm: input {x.shape}, scale {scale.shape}, shift {shift.shape}")
    dtype = x.dtype
    sc = np.ascontiguousarray(scale.data, dtype=dtype)
    out, xhat, inv = kernels.layer_norm_forward(
        np.ascontiguousarray(x.data), sc, np.ascontiguousarray(shift.data, dtype=dtype), eps
    )

    def backward(g):
        return kernels.layer_norm_backward(np.ascontiguousarray(g, dtype=dtype), xhat, inv, sc)

    return Tensor.from_op(out, (x, scale, shift), backward, "layer_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis: [B, C, L] -> [B, C]."""
    if x.ndim != 3:
        raise ShapeMismatch(f"global_avg_pool expects [B, C, L], got {x.shape}")
    length = x.shape[2]

    def backward(g):
        return (np.repeat(g[:, :, None] / length, length, axis=2),)

    return Tensor.from_op(x.data.mean(axis=2), (x,), backward, "global_avg_pool")


def l2_normalize(z: Tensor) -> Tensor:
    """Scale each row of z [N, D] to unit Euclidean norm."""
    norms = np.sqrt((z.data * z.data).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise ZeroVector(f"row {int(np.flatnonzero(norms[:, 0] == 0)[0])} has zero norm")
    u = z.data / norms

    def backward(g):
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / norms,)

    return Tensor.from_op(u, (z,), backward, "l2_normalize")


def cosine_similarity_matrix(z: Tensor) -> Tensor:
    """All-pairs cosine similarity of the rows of z [N, D] -> [N, N]."""
    u = l2_normalize(z)

    def backward(g):
        return ((g + g.T) @ u.data,)

    return Tensor.from_op(u.data @ u.data.T, (u,), backward, "cosine_similarity_matrix")
