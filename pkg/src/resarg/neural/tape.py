"""Minimal reverse-mode autodiff over numpy arrays.

Every operation records its parents and a vector-Jacobian callback on a
Tensor node; ``backward`` walks the graph once in reverse topological
order.  64-bit floats throughout: the gradient-check contract is stated
at 64-bit precision.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class Tensor:
    """One node of the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar used sparingly in block code
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(x) -> Tensor:
    return Tensor(x)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum out axes that numpy broadcasting introduced or stretched."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))
    out._vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data, (a, b))
    out._vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))
    out._vjp = lambda g: (_unbroadcast(g * b.data, a.shape),
                          _unbroadcast(g * a.data, b.shape))
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data, (a, b))
    out._vjp = lambda g: (_unbroadcast(g / b.data, a.shape),
                          _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return out


def scale(a, s: float) -> Tensor:
    out = Tensor(a.data * s, (a,))
    out._vjp = lambda g: (g * s,)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; higher-rank inputs are reshaped by the caller."""
    out = Tensor(a.data @ b.data, (a, b))
    out._vjp = lambda g: (g @ b.data.T, a.data.T @ g)
    return out


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    out = Tensor(a.data * keep, (a,))
    out._vjp = lambda g: (g * keep,)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, (a,))
    out._vjp = lambda g: (g * s * (1.0 - s),)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, (a,))
    out._vjp = lambda g: (g * (1.0 - t * t),)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e, (a,))
    out._vjp = lambda g: (g * e,)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), (a,))
    out._vjp = lambda g: (g / a.data,)
    return out


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    out = Tensor(r, (a,))
    out._vjp = lambda g: (g * 0.5 / r,)
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    out._vjp = vjp
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = Tensor(a.data.reshape(shape), (a,))
    out._vjp = lambda g: (g.reshape(old),)
    return out


def concat(parts, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out._vjp = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def select_time(a: Tensor, t: int) -> Tensor:
    """x[:, t, :] for a rank-3 tensor."""
    out = Tensor(a.data[:, t, :], (a,))

    def vjp(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[:, t, :] = g
        return (full,)

    out._vjp = vjp
    return out


def slice_axis1(a: Tensor, start: int, stop: int) -> Tensor:
    """x[:, start:stop] for a rank-2 tensor."""
    out = Tensor(a.data[:, start:stop], (a,))

    def vjp(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[:, start:stop] = g
        return (full,)

    out._vjp = vjp
    return out


def slice_time(a: Tensor, start: int, stop: int) -> Tensor:
    """x[:, start:stop, :] for a rank-3 tensor."""
    out = Tensor(a.data[:, start:stop, :], (a,))

    def vjp(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[:, start:stop, :] = g
        return (full,)

    out._vjp = vjp
    return out


def _topo_order(root: Tensor):
    """Iterative post-order DFS; LSTM unrolls overflow the recursion limit."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Tensor, seed=1.0):
    """Accumulate d(root)/d(leaf) into every reachable node's ``grad``."""
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.broadcast_to(
        np.asarray(seed, dtype=DTYPE), root.shape).copy()
    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if parent.grad is None:
                parent.grad = np.zeros(parent.shape, dtype=DTYPE)
            parent.grad += g
