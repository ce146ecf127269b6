"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`ecgc.nn.ops`
build new tensors that remember their parents and a closure mapping the
output gradient to parent gradients. :meth:`Tensor.backward` walks that graph
once in reverse topological order; the graph is consumed afterwards and a
second call raises :class:`~ecgc.errors.GraphReused`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ecgc.errors import GraphReused, NonFiniteValue, NotScalar

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite value produced by {what}")


class Tensor:
    """n-dimensional real array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        """Create the output of an operation; records the graph edge if needed."""
        _check_finite(data, op)
        parents = tuple(parents)
        out = cls(data)
        out._op = op
        if any(p.requires_grad for p in parents):
            for p in parents:
                if p._consumed:
                    raise GraphReused(f"{op} consumes a tensor whose graph was already backpropagated")
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{label})"

    # -- autodiff -----------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise GraphReused("backward() already ran on this graph; rebuild it first")
        if not self.requires_grad:
            self._consumed = True
            return

        order = self._topological_order()
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if g is not None:
                    _check_finite(g, f"gradient of {node.name or 'leaf'}")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node._consumed = True
            if g is None:
                node._parents = ()
                node._backward = None
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    pg = pg.reshape(parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None
        self._consumed = True

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            if node._consumed and not node.is_leaf:
                raise GraphReused("graph contains a node that was already backpropagated")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        from ecgc.nn import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from ecgc.nn import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from ecgc.nn import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from ecgc.nn import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from ecgc.nn import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from ecgc.nn import ops

        return ops.matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)
