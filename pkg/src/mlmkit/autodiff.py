"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Internal engine for the encoder and the task heads. It implements only the
operations those graphs need; every op records a backward closure and
``Tensor.backward()`` replays the tape in reverse topological order,
accumulating gradients on leaves created with ``requires_grad=True``.

All data is float64 so finite-difference checks against the produced
gradients are meaningful at tight tolerances.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this (scalar) node w.r.t. all leaves."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    """A graph constant: participates in values, never receives gradient."""
    return Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if grad_parents:
        out.requires_grad = True
        out._parents = grad_parents
        out._backward = backward
    return out


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _sum_to_shape(g, a.shape)
        if b.requires_grad:
            b.grad += _sum_to_shape(g, b.shape)

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _sum_to_shape(g, a.shape)
        if b.requires_grad:
            b.grad -= _sum_to_shape(g, b.shape)

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _sum_to_shape(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _sum_to_shape(g * a.data, b.shape)

    return _node(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _sum_to_shape(g / b.data, a.shape)
        if b.requires_grad:
            b.grad += _sum_to_shape(-g * a.data / (b.data * b.data), b.shape)

    return _node(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    """Elementwise a**c for a constant scalar exponent."""
    a = as_tensor(a)
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(g):
        if a.requires_grad:
            a.grad += g * exponent * a.data ** (exponent - 1.0)

    return _node(data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.grad += _sum_to_shape(ga, a.shape)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.grad += _sum_to_shape(gb, b.shape)

    return _node(data, (a, b), backward)


# -- shape -------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.grad += g.reshape(a.shape)

    return _node(data, (a,), backward)


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    data = np.swapaxes(a.data, axis1, axis2)

    def backward(g):
        if a.requires_grad:
            a.grad += np.swapaxes(g, axis1, axis2)

    return _node(data, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.grad += g[tuple(index)]

    return _node(data, tensors, backward)


# -- reductions ---------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += np.broadcast_to(g, a.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, a.shape)

    return _node(data, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += np.broadcast_to(g, a.shape) / count
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, a.shape) / count

    return _node(data, (a,), backward)


# -- nonlinearities ------------------------------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * (1.0 - data * data)

    return _node(data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a.grad += g * (a.data > 0.0)

    return _node(data, (a,), backward)


def gelu(a) -> Tensor:
    """Exact GELU: x * Phi(x), with Phi the standard normal CDF."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT2))
    data = a.data * cdf

    def backward(g):
        if a.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
            a.grad += g * (cdf + a.data * pdf)

    return _node(data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a.grad += data * (g - (g * data).sum(axis=axis, keepdims=True))

    return _node(data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        if a.requires_grad:
            a.grad += g - soft * g.sum(axis=axis, keepdims=True)

    return _node(data, (a,), backward)


# -- indexing -----------------------------------------------------------------


def embedding(weight, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...], :]."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    data = weight.data[ids]

    def backward(g):
        if weight.requires_grad:
            np.add.at(weight.grad, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))

    return _node(data, (weight,), backward)


def select(a, index) -> Tensor:
    """Fancy-index gather a[index]; index is a tuple of integer arrays."""
    a = as_tensor(a)
    data = a.data[index]

    def backward(g):
        if a.requires_grad:
            np.add.at(a.grad, index, g)

    return _node(data, (a,), backward)


# -- stochastic ----------------------------------------------------------------


def dropout(a, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when train is False or rate is 0."""
    a = as_tensor(a)
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, constant(keep))
