"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array. Operations build a computation graph only
when at least one operand has ``requires_grad`` set; everything else runs as
plain numpy, so frozen-parameter forward passes cost nothing extra and are
detached by construction. ``backward`` walks the graph in reverse topological
order and accumulates gradients into the ``grad`` field of every node that
requires them.

Two reductions (``sum_exact``, ``mean_rows_exact``) use ``math.fsum`` so the
result is the correctly rounded sum of the operand multiset, independent of
element order. Distribution rewards use them to make permutation invariance
and argument-swap symmetry hold exactly, not just to rounding.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

ArrayLike = "np.ndarray | float | int | list"


class NonFiniteError(ValueError):
    """Raised when a tensor would contain NaN or infinity."""


def _check_finite(data: np.ndarray, context: str = "tensor") -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {context}")


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "operation result")
        out.data = arr
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Value-sharing copy with no graph linkage."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph walk ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every tracked ancestor."""
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor with no tracked ancestors")

        # Iterative post-order topological sort: graphs can be deep.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue

            def accumulate(parent: Tensor, pg: np.ndarray) -> None:
                if not parent.requires_grad:
                    return
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

            node._backward_dispatch(g, accumulate)

    def _backward_dispatch(self, g, accumulate) -> None:
        self._backward(g, accumulate)  # type: ignore[misc]

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def bwd(g, acc):
            acc(self, _unbroadcast(g, self.data.shape))
            acc(other, _unbroadcast(g, other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, acc):
            acc(self, -g)

        return Tensor._from_op(-self.data, (self,), bwd)

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data

        def bwd(g, acc):
            acc(self, _unbroadcast(g, self.data.shape))
            acc(other, _unbroadcast(-g, other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def bwd(g, acc):
            acc(self, _unbroadcast(g * other.data, self.data.shape))
            acc(other, _unbroadcast(g * self.data, other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def bwd(g, acc):
            acc(self, _unbroadcast(g / other.data, self.data.shape))
            acc(other, _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("exponent must be a Python number")
        p = float(exponent)
        out_data = self.data**p

        def bwd(g, acc):
            acc(self, g * p * self.data ** (p - 1.0))

        return Tensor._from_op(out_data, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def bwd(g, acc):
            acc(self, g @ other.data.T)
            acc(other, self.data.T @ g)

        return Tensor._from_op(out_data, (self, other), bwd)

    # -- shape ops -----------------------------------------------------------

    @property
    def T(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ValueError("transpose supports 2-D tensors only")

        def bwd(g, acc):
            acc(self, g.T)

        return Tensor._from_op(self.data.T, (self,), bwd)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape
        out_data = self.data.reshape(shape)

        def bwd(g, acc):
            acc(self, g.reshape(orig))

        return Tensor._from_op(out_data, (self,), bwd)

    # -- reductions ------------------------------------------------------------

    def sum(self) -> "Tensor":
        shape = self.data.shape

        def bwd(g, acc):
            acc(self, np.broadcast_to(g, shape).copy())

        return Tensor._from_op(np.sum(self.data), (self,), bwd)

    def sum_exact(self) -> "Tensor":
        """Order-independent sum: fsum gives the correctly rounded total."""
        shape = self.data.shape
        value = math.fsum(self.data.ravel().tolist())

        def bwd(g, acc):
            acc(self, np.broadcast_to(g, shape).copy())

        return Tensor._from_op(np.float64(value), (self,), bwd)

    def mean(self) -> "Tensor":
        shape = self.data.shape
        n = self.data.size

        def bwd(g, acc):
            acc(self, np.broadcast_to(g / n, shape).copy())

        return Tensor._from_op(np.mean(self.data), (self,), bwd)

    def mean_rows_exact(self) -> "Tensor":
        """Column means of a 2-D tensor via fsum, so row order cannot matter."""
        if self.data.ndim != 2:
            raise ValueError("mean_rows_exact requires a 2-D tensor")
        m = self.data.shape[0]
        cols = [math.fsum(col.tolist()) / m for col in self.data.T]

        def bwd(g, acc):
            acc(self, np.broadcast_to(g / m, self.data.shape).copy())

        return Tensor._from_op(np.array(cols), (self,), bwd)

    # -- elementwise nonlinearities -------------------------------------------

    def silu(self) -> "Tensor":
        s = _sigmoid(self.data)
        out_data = self.data * s

        def bwd(g, acc):
            acc(self, g * (s * (1.0 + self.data * (1.0 - s))))

        return Tensor._from_op(out_data, (self,), bwd)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def bwd(g, acc):
            acc(self, g * out_data)

        return Tensor._from_op(out_data, (self,), bwd)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def bwd(g, acc):
            acc(self, g / self.data)

        return Tensor._from_op(out_data, (self,), bwd)

    def clamp_min(self, floor: float) -> "Tensor":
        """Elementwise max(x, floor); gradient passes only where x > floor."""
        mask = self.data > floor
        out_data = np.maximum(self.data, floor)

        def bwd(g, acc):
            acc(self, g * mask)

        return Tensor._from_op(out_data, (self,), bwd)

    # -- gather / scatter -------------------------------------------------------

    def gather(self, idx: np.ndarray) -> "Tensor":
        """Read flattened positions; index -1 yields 0.0 (implicit zero pad)."""
        idx = np.asarray(idx, dtype=np.int64)
        flat = self.data.reshape(-1)
        if idx.size and (idx.max() >= flat.size or idx.min() < -1):
            raise IndexError("gather index out of range")
        valid = idx >= 0
        out_data = np.where(valid, flat[np.where(valid, idx, 0)], 0.0)
        shape = self.data.shape

        def bwd(g, acc):
            gx = np.zeros(flat.size, dtype=np.float64)
            np.add.at(gx, idx[valid], g[valid])
            acc(self, gx.reshape(shape))

        return Tensor._from_op(out_data, (self,), bwd)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns."""
    tensors = [as_tensor(t) for t in tensors]
    widths = [t.data.shape[1] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + widths)

    def bwd(g, acc):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            acc(t, g[:, lo:hi])

    return Tensor._from_op(out_data, tensors, bwd)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=0)

    def bwd(g, acc):
        for i, t in enumerate(tensors):
            acc(t, g[i])

    return Tensor._from_op(out_data, tensors, bwd)


def pairwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs inner products: (M, D) x (N, D) -> (M, N).

    Computed by broadcast-multiply then a fixed-axis reduction, so entry
    (i, j) of pairwise_dot(a, b) and entry (j, i) of pairwise_dot(b, a) are
    bitwise identical.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ValueError(
            f"pairwise_dot needs matching feature widths, got {a.data.shape} and {b.data.shape}"
        )
    out_data = np.sum(a.data[:, None, :] * b.data[None, :, :], axis=2)

    def bwd(g, acc):
        acc(a, g @ b.data)
        acc(b, g.T @ a.data)

    return Tensor._from_op(out_data, (a, b), bwd)


def softmax_1d(x: Tensor) -> Tensor:
    """Softmax of a 1-D tensor, shifted by the (constant) max for stability."""
    if x.data.ndim != 1:
        raise ValueError("softmax_1d requires a 1-D tensor")
    shift = float(np.max(x.data))  # constant: softmax is shift invariant
    e = (x - shift).exp()
    return e / e.sum()
