"""Reverse-mode automatic differentiation over numpy arrays.

Every tensor carries a float64 numpy array. Operations record a backward
closure on a tape of parent links; Tensor.backward() walks the graph in
reverse topological order and accumulates gradients into .grad arrays.
All public operations check their results for NaN/Inf unless finite checks
are disabled via set_finite_checks(False).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericsError

_GRAD_ENABLED = True
_FINITE_CHECKS = True

_GELU_C = math.sqrt(2.0 / math.pi)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf checking on operation results. Returns previous value."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus an optional gradient and tape link."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # ------------------------------------------------------------------
    # construction helpers

    @staticmethod
    def _from_op(
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None],
        op: str,
    ) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accum(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    # ------------------------------------------------------------------
    # bookkeeping

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of a scalar (or supplied seed) into the graph."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed requires a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise DimensionError("backward seed shape mismatch")

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
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # arithmetic

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(-g)

        return Tensor._from_op(-a.data, (a,), backward, "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other
        denom = b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(_unbroadcast(g / denom, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (denom * denom), b.data.shape))

        return Tensor._from_op(a.data / denom, (a, b), backward, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._coerce(other) / self

    def pow(self, exponent: float) -> "Tensor":
        a = self
        p = float(exponent)
        out_data = a.data ** p

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * p * a.data ** (p - 1.0))

        return Tensor._from_op(out_data, (a,), backward, "pow")

    def __pow__(self, exponent: float) -> "Tensor":
        return self.pow(exponent)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise DimensionError("matmul requires tensors with ndim >= 2")

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accum(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accum(_unbroadcast(gb, b.data.shape))

        return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")

    def __matmul__(self, other) -> "Tensor":
        return self.matmul(other)

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            grad = g
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else axis
                for ax in sorted(ax % a.data.ndim for ax in axes):
                    grad = np.expand_dims(grad, ax)
            a._accum(np.broadcast_to(grad, a.data.shape).copy())

        return Tensor._from_op(np.asarray(out_data), (a,), backward, "sum")

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        return masked_max(self, None, axis=axis, keepdims=keepdims)

    # ------------------------------------------------------------------
    # shape manipulation

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        old_shape = a.data.shape
        out_data = a.data.reshape(*shape)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g.reshape(old_shape))

        return Tensor._from_op(out_data, (a,), backward, "reshape")

    def swapaxes(self, ax1: int, ax2: int) -> "Tensor":
        a = self
        out_data = np.swapaxes(a.data, ax1, ax2).copy()

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(np.swapaxes(g, ax1, ax2))

        return Tensor._from_op(out_data, (a,), backward, "swapaxes")

    def take(self, indices: np.ndarray, axis: int = 0) -> "Tensor":
        """Gather along an axis with integer indices (scatter-add backward)."""
        a = self
        idx = np.asarray(indices)
        if not np.issubdtype(idx.dtype, np.integer):
            raise DimensionError("take requires integer indices")
        out_data = np.take(a.data, idx, axis=axis)

        def backward(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            grad = np.zeros_like(a.data)
            if axis == 0:
                np.add.at(grad, idx, g)
            else:
                prefix = (slice(None),) * (axis % a.data.ndim)
                np.add.at(grad, prefix + (idx,), g)
            a._accum(grad)

        return Tensor._from_op(out_data, (a,), backward, "take")

    # ------------------------------------------------------------------
    # elementwise nonlinearities

    def exp(self) -> "Tensor":
        a = self
        out_data = np.exp(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * out_data)

        return Tensor._from_op(out_data, (a,), backward, "exp")

    def log(self) -> "Tensor":
        a = self
        out_data = np.log(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g / a.data)

        return Tensor._from_op(out_data, (a,), backward, "log")

    def sqrt(self) -> "Tensor":
        a = self
        out_data = np.sqrt(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (a,), backward, "sqrt")

    def sigmoid(self) -> "Tensor":
        a = self
        x = a.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (a,), backward, "sigmoid")

    def tanh(self) -> "Tensor":
        a = self
        out_data = np.tanh(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * (1.0 - out_data * out_data))

        return Tensor._from_op(out_data, (a,), backward, "tanh")

    def relu(self) -> "Tensor":
        a = self
        out_data = np.maximum(a.data, 0.0)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * (a.data > 0.0))

        return Tensor._from_op(out_data, (a,), backward, "relu")

    def gelu(self) -> "Tensor":
        """Tanh approximation of the Gaussian error linear unit."""
        a = self
        x = a.data
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out_data = 0.5 * x * (1.0 + t)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
                grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
                a._accum(g * grad)

        return Tensor._from_op(out_data, (a,), backward, "gelu")

    def clamp_min(self, floor: float) -> "Tensor":
        """Elementwise max(x, floor); gradient is zero at or below the floor."""
        a = self
        out_data = np.maximum(a.data, floor)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accum(g * (a.data > floor))

        return Tensor._from_op(out_data, (a,), backward, "clamp_min")


# ----------------------------------------------------------------------
# free functions


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along an axis."""
    data = x.data
    m = data.max(axis=axis, keepdims=True)
    e = np.exp(data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            inner = (y * g).sum(axis=axis, keepdims=True)
            x._accum(y * (g - inner))

    return Tensor._from_op(y, (x,), backward, "softmax")


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax restricted to positions where mask is True.

    Masked positions get probability exactly 0. A row with no valid
    position is a contract violation.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    if not np.all(m.any(axis=axis)):
        raise ContractError("masked_softmax: a row has no valid positions")
    data = x.data
    neg = np.where(m, data, -np.inf)
    row_max = neg.max(axis=axis, keepdims=True)
    shifted = np.where(m, data - row_max, 0.0)
    e = np.where(m, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            inner = (y * g).sum(axis=axis, keepdims=True)
            x._accum(y * (g - inner))

    return Tensor._from_op(y, (x,), backward, "masked_softmax")


def masked_max(x: Tensor, mask: np.ndarray | None, axis: int,
               keepdims: bool = False, empty_zero: bool = False) -> Tensor:
    """Max over an axis restricted to valid positions.

    Gradient routes to the first maximizing position. Rows with no valid
    position yield 0 when empty_zero is set and raise otherwise.
    """
    data = x.data
    if mask is None:
        valid = np.ones_like(data, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
    ax = axis % data.ndim
    any_valid = valid.any(axis=ax)
    all_valid = bool(np.all(any_valid))
    if not all_valid and not empty_zero:
        raise ContractError("masked_max: a row has no valid positions")
    neg = np.where(valid, data, -np.inf)
    out_data = neg.max(axis=ax, keepdims=keepdims)
    if not all_valid:
        fill = np.expand_dims(any_valid, ax) if keepdims else any_valid
        out_data = np.where(fill, out_data, 0.0)
    arg = np.argmax(neg, axis=ax)

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        grad = np.zeros_like(data)
        g_full = g if keepdims else np.expand_dims(g, ax)
        arg_exp = np.expand_dims(arg, ax)
        np.put_along_axis(grad, arg_exp, g_full, ax)
        if not all_valid:
            valid_exp = np.expand_dims(any_valid, ax)
            grad = np.where(np.broadcast_to(valid_exp, grad.shape), grad, 0.0)
        x._accum(grad)

    return Tensor._from_op(out_data, (x,), backward, "masked_max")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._coerce(t) for t in tensors]
    sizes = [p.data.shape[axis] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)

    def backward(g: np.ndarray) -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                p._accum(g[tuple(sl)])
            offset += size

    return Tensor._from_op(out_data, parts, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._coerce(t) for t in tensors]
    out_data = np.stack([p.data for p in parts], axis=axis)

    def backward(g: np.ndarray) -> None:
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accum(np.take(g, i, axis=axis))

    return Tensor._from_op(out_data, parts, backward, "stack")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0. Requires an rng when active."""
    if p < 0.0 or p >= 1.0:
        raise ContractError("dropout probability must lie in [0, 1)")
    if p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout with p > 0 requires an rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accum(g * keep)

    return Tensor._from_op(x.data * keep, (x,), backward, "dropout")


def l2_normalize(x: Tensor, axis: int = -1, floor: float = 1e-12) -> Tensor:
    """Scale rows to unit L2 norm, with an epsilon floor on the norm."""
    sq = (x * x).sum(axis=axis, keepdims=True)
    norm = sq.sqrt().clamp_min(floor)
    return x / norm


class Parameter(Tensor):
    """A named trainable tensor; gradient buffer is always allocated."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.data)
