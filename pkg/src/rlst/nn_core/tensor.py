"""Reverse-mode autodiff over float64 numpy arrays.

Every op builds its output eagerly and, when gradients are enabled and any
input requires them, records a closure that pushes the output gradient back
to its inputs.  ``Tensor.backward`` walks the recorded graph in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference-only forward passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class NumericalError(ArithmeticError):
    """A non-finite value appeared where a finite one was required."""


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
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
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.values) if seed is None else np.asarray(seed, dtype=np.float64)
        }
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.values + b.values, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.values - b.values, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    return _result(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.values)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Tensor, floor: float = PROB_FLOOR) -> Tensor:
    """Natural log with the probability floor; no gradient below the floor."""
    v = x.values
    clipped = np.maximum(v, floor)
    live = v > floor
    return _result(np.log(clipped), (x,), lambda g: (np.where(live, g / clipped, 0.0),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    v = x.values
    live = (v >= lo) & (v <= hi)
    return _result(np.clip(v, lo, hi), (x,), lambda g: (np.where(live, g, 0.0),))


def floor_log_prob(logp: Tensor) -> Tensor:
    """Apply the probability floor to log-probabilities."""
    v = logp.values
    live = v > LOG_FLOOR
    return _result(np.maximum(v, LOG_FLOOR), (logp,), lambda g: (np.where(live, g, 0.0),))


# linear algebra


def linear(x: Tensor, weight: Tensor) -> Tensor:
    """``x @ weight.T`` with weight stored (out, in)."""
    xv, wv = x.values, weight.values

    def backward(g):
        gx = g @ wv
        gw = np.tensordot(g, xv, axes=(tuple(range(g.ndim - 1)), tuple(range(xv.ndim - 1))))
        return gx, gw

    return _result(xv @ wv.T, (x, weight), backward)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every index of an operand must occur in the output or the other operand."""
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    av, bv = a.values, b.values
    return _result(
        np.einsum(spec, av, bv),
        (a, b),
        lambda g: (np.einsum(f"{out},{sb}->{sa}", g, bv), np.einsum(f"{out},{sa}->{sb}", g, av)),
    )


# shaping


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([x.values for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(xs: list[Tensor], axis: int = 0) -> Tensor:
    n = len(xs)
    return _result(
        np.stack([x.values for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _result(table.values[ids], (table,), backward)


def index(x: Tensor, key) -> Tensor:
    """Numpy (fancy) indexing with scatter-add backward."""
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, key, g)
        return (gx,)

    return _result(x.values[key], (x,), backward)


def pick(x: Tensor, ids: np.ndarray) -> Tensor:
    """``x[b, ids[b]]`` for a (B, V) tensor."""
    ids = np.asarray(ids, dtype=np.int64)
    ar = np.arange(len(ids))
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[ar, ids] = g
        return (gx,)

    return _result(x.values[ar, ids], (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _result(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


# reductions


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.sum(x.values, axis=axis), (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.values.size
    return mul(sum_(x), 1.0 / n)


# normalizers


def softmax_values(v: np.ndarray, axis: int = -1) -> np.ndarray:
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    # summing in sorted order makes the result exactly permutation-equivariant
    return e / np.sum(np.sort(e, axis=axis), axis=axis, keepdims=True)


def log_softmax_values(v: np.ndarray, axis: int = -1) -> np.ndarray:
    z = v - np.max(v, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.values.size == 0:
        raise ValueError("softmax of an empty vector")
    y = softmax_values(x.values, axis)
    return _result(y, (x,), lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.values.size == 0:
        raise ValueError("log_softmax of an empty vector")
    y = log_softmax_values(x.values, axis)
    p = np.exp(y)
    return _result(y, (x,), lambda g: (g - p * np.sum(g, axis=axis, keepdims=True),))


def cross_entropy(predicted, target_index: int) -> float:
    """``-ln predicted[target_index]`` under the probability floor."""
    p = np.asarray(predicted.values if isinstance(predicted, Tensor) else predicted, dtype=np.float64)
    if not 0 <= target_index < p.shape[-1]:
        raise IndexError(f"target index {target_index} out of range for {p.shape[-1]} classes")
    return -math.log(max(float(p[..., target_index]), PROB_FLOOR))
