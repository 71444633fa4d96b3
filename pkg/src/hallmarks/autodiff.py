"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, when an operation involves at least one
``requires_grad`` tensor, records its parents and a backward closure. Graphs
are rebuilt on every forward pass (define-by-run); calling ``backward()`` on
a scalar result walks the tape in reverse topological order and accumulates
gradients into every reachable ``requires_grad`` leaf.

Two precisions are supported: float64 for gradient checking and oracle
tests, float32 for training throughput. Operations inherit the numpy
promotion of their inputs.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import GraphError, ShapeError

GELU_COEF = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind not in "fiu":
        raise TypeError(f"tensor data must be numeric, got dtype {arr.dtype}")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy-backed array plus optional gradient tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        out = cls(data)
        out._op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
        return out

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic -------------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor._from_op(self.data + other.data, (self, other), "add")

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = backward
        return out

    def __radd__(self, other) -> "Tensor":
        return self + other

    def __neg__(self) -> "Tensor":
        out = Tensor._from_op(-self.data, (self,), "neg")

        def backward():
            if self.requires_grad:
                self._accumulate(-out.grad)

        out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor._from_op(self.data * other.data, (self, other), "mul")

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = backward
        return out

    def __rmul__(self, other) -> "Tensor":
        return self * other

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor._from_op(self.data / other.data, (self, other), "div")

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-out.grad * self.data / other.data**2, other.shape)
                )

        out._backward = backward
        return out

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- reductions and reshaping ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def backward():
            if not self.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        return self.sum() * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        out = Tensor._from_op(self.data.reshape(*shape), (self,), "reshape")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.shape))

        out._backward = backward
        return out

    def transpose(self) -> "Tensor":
        out = Tensor._from_op(self.data.T.copy(), (self,), "transpose")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.T)

        out._backward = backward
        return out

    def slice_rows(self, start: int, stop: int) -> "Tensor":
        out = Tensor._from_op(self.data[start:stop].copy(), (self,), "slice_rows")

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                g[start:stop] = out.grad
                self._accumulate(g)

        out._backward = backward
        return out

    def slice_cols(self, start: int, stop: int) -> "Tensor":
        out = Tensor._from_op(self.data[:, start:stop].copy(), (self,), "slice_cols")

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                g[:, start:stop] = out.grad
                self._accumulate(g)

        out._backward = backward
        return out

    # -- elementwise nonlinearities ----------------------------------------------

    def log(self) -> "Tensor":
        out = Tensor._from_op(np.log(self.data), (self,), "log")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)

        out._backward = backward
        return out

    def exp(self) -> "Tensor":
        out = Tensor._from_op(np.exp(self.data), (self,), "exp")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * out.data)

        out._backward = backward
        return out

    def tanh(self) -> "Tensor":
        out = Tensor._from_op(np.tanh(self.data), (self,), "tanh")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * (1.0 - out.data**2))

        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor._from_op(s, (self,), "sigmoid")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * out.data * (1.0 - out.data))

        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        out = Tensor._from_op(np.maximum(self.data, 0.0), (self,), "relu")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * (self.data > 0))

        out._backward = backward
        return out

    def clamp(self, lo: float, hi: float) -> "Tensor":
        """Clip values to [lo, hi]; gradient passes only through the interior."""
        out = Tensor._from_op(np.clip(self.data, lo, hi), (self,), "clamp")

        def backward():
            if self.requires_grad:
                inside = (self.data > lo) & (self.data < hi)
                self._accumulate(out.grad * inside)

        out._backward = backward
        return out

    # -- backward pass -------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from here.

        Only scalar results may start a backward pass.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss is detached: no requires_grad input feeds it")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def graph_nodes(self) -> list[tuple[str, tuple[int, ...], "Tensor"]]:
        """Return the op records feeding this tensor in topological order.

        Each record is ``(op kind, parent tensor ids, output tensor)``; every
        parent id precedes its consumer in the returned list.
        """
        order = _topo_order(self)
        return [(t._op, tuple(id(p) for p in t._parents), t) for t in order]


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS: the graphs get deep (one node per op per layer).
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


# -- free-function ops ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors, differentiable in both."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor._from_op(a.data @ b.data, (a, b), "matmul")

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction for overflow safety."""
    nd = x.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._from_op(y, (x,), "softmax")

    def backward():
        if x.requires_grad:
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))

    out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row of the last axis to zero mean / unit variance, then
    scale by ``gamma`` and shift by ``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm parameter length mismatch: x rows have {d} features, "
            f"gamma {gamma.shape}, beta {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor._from_op(gamma.data * xhat + beta.data, (x, gamma, beta), "layer_norm")

    def backward():
        g = out.grad
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gg = g * gamma.data
            dot1 = gg.mean(axis=-1, keepdims=True)
            dot2 = (gg * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gg - dot1 - xhat * dot2) * inv)

    out._backward = backward
    return out


def gelu(x: Tensor) -> Tensor:
    """GELU activation via the tanh approximation."""
    u = GELU_COEF * (x.data + GELU_CUBIC * x.data**3)
    t = np.tanh(u)
    out = Tensor._from_op(0.5 * x.data * (1.0 + t), (x,), "gelu")

    def backward():
        if x.requires_grad:
            du = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * x.data**2)
            local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
            x._accumulate(out.grad * local)

    out._backward = backward
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor by index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor._from_op(table.data[idx], (table,), "gather_rows")

    def backward():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table._accumulate(g)

    out._backward = backward
    return out


def concat_rows(tensors: Iterable[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 0."""
    ts = list(tensors)
    out = Tensor._from_op(np.concatenate([t.data for t in ts], axis=0), tuple(ts), "concat_rows")

    def backward():
        offset = 0
        for t in ts:
            n = t.shape[0]
            if t.requires_grad:
                t._accumulate(out.grad[offset : offset + n])
            offset += n

    out._backward = backward
    return out


def concat_cols(tensors: Iterable[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 1."""
    ts = list(tensors)
    out = Tensor._from_op(np.concatenate([t.data for t in ts], axis=1), tuple(ts), "concat_cols")

    def backward():
        offset = 0
        for t in ts:
            n = t.shape[1]
            if t.requires_grad:
                t._accumulate(out.grad[:, offset : offset + n])
            offset += n

    out._backward = backward
    return out
