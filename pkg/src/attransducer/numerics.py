"""Dense tensors with tape-based reverse-mode differentiation.

Only what the transducer needs: elementwise arithmetic with numpy
broadcasting, batched matmul, reductions, reshapes, a handful of
nonlinearities and a hook (:meth:`Tensor.from_op`) for fused operations
that supply their own vector-Jacobian product.

``-inf`` is a legal log-probability everywhere: ``-inf + x == -inf`` and
:func:`logsumexp` ignores ``-inf`` entries unless all of them are.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = float("-inf")


class Tensor:
    """An ndarray plus the bookkeeping needed to backpropagate into it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the reflected Tensor op

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> "Tensor":
        """Record ``data`` as the result of an op over ``parents``.

        ``backward(g)`` returns one gradient (or None) per parent.
        """
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)

            def _apply(g):
                for p, gp in zip(parents, backward(g)):
                    if gp is not None and p.requires_grad:
                        p._accumulate(gp)

            out._backward = _apply
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        return Tensor.from_op(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor.from_op(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor.from_op(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor.from_op(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, k: float):
        a = self.data
        return Tensor.from_op(a ** k, (self,), lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        shape = self.data.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor.from_op(self.data[idx], (self,), back)

    # shape ----------------------------------------------------------------
    def reshape(self, *shape):
        old = self.data.shape
        return Tensor.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def backward(self):
        return backward(self)


class Parameter(Tensor):
    """A named leaf tensor that always participates in the tape."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data

    def back(g):
        if y.ndim == 1:
            ga = np.multiply.outer(g, y)
            gb = np.tensordot(g, x, axes=(tuple(range(g.ndim)), tuple(range(x.ndim - 1))))
            return ga, gb
        if x.ndim == 1:
            ga = g @ np.swapaxes(y, -1, -2)
            gb = np.multiply.outer(x, g)
            return ga, gb
        return g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g

    return Tensor.from_op(x @ y, (a, b), back)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    a = x.data
    return Tensor.from_op(np.log(a), (x,), lambda g: (g / a,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * 0.5 / y,))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(np.concatenate([p.data for p in parts], axis=axis), parts,
                          lambda g: np.split(g, splits, axis=axis))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return Tensor.from_op(np.broadcast_to(x.data, shape), (x,), lambda g: (g,))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant."""
    return Tensor.from_op(np.where(mask, value, x.data), (x,), lambda g: (np.where(mask, 0.0, g),))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return Tensor.from_op(table.data[ids], (table,), back)


# log-space primitives -------------------------------------------------------

def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def logsumexp(values: Iterable[float]) -> float:
    """``log(sum(exp(v)))`` by max-shift; ``-inf`` if every input is ``-inf``."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("logsumexp of an empty sequence")
    m = max(vals)
    if m == NEG_INF:
        return NEG_INF
    if math.isnan(m) or any(math.isnan(v) for v in vals):
        return math.nan
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))


def logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _softmax_np(a: np.ndarray, axis: int) -> np.ndarray:
    z = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits, axis: int = -1):
    """Softmax along ``axis``; accepts array-likes or a :class:`Tensor`.

    ``-inf`` logits get probability zero. NaN anywhere is rejected.
    """
    if isinstance(logits, Tensor):
        if np.isnan(logits.data).any():
            raise ValueError("softmax input contains NaN")
        y = _softmax_np(logits.data, axis)
        return Tensor.from_op(
            y, (logits,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))
    a = np.asarray(logits, dtype=np.float64)
    if a.size == 0:
        raise ValueError("softmax of an empty vector")
    if np.isnan(a).any():
        raise ValueError("softmax input contains NaN")
    return _softmax_np(a, axis)


def log_softmax(logits, axis: int = -1):
    if isinstance(logits, Tensor):
        a = logits.data
        z = a - np.max(a, axis=axis, keepdims=True)
        y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
        p = np.exp(y)
        return Tensor.from_op(y, (logits,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))
    a = np.asarray(logits, dtype=np.float64)
    z = a - np.max(a, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# reverse sweep ----------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Parameter] | None = None) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Returns ``{name: grad}`` for every reachable :class:`Parameter`; any
    parameter listed in ``params`` but not reachable gets zeros. The tape is
    released afterwards, so a second call on the same loss raises.
    """
    if loss._consumed:
        raise RuntimeError("backward() already ran on this tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"non-finite loss {float(loss.data)}")
    loss._consumed = True
    grads: dict[str, np.ndarray] = {}
    if loss.requires_grad:
        order = _topological(loss)
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if not isinstance(node, Parameter):
                node.grad = None
            node._backward = None
            node._parents = ()
        for node in order:
            if isinstance(node, Parameter) and node.grad is not None:
                grads[node.name] = node.grad
    for p in params or ():
        if p.name not in grads:
            grads[p.name] = np.zeros_like(p.data)
    return grads


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None
