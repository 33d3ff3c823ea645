"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node holding its output value, its parent nodes and a
closure mapping the upstream gradient to one gradient per parent.  Values are
checked for finiteness as they are produced so a failure names the node that
went bad instead of surfacing as a NaN loss many steps later.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DiffError(RuntimeError):
    """Base class for engine failures."""


class ShapeError(DiffError):
    pass


class NonFiniteError(DiffError):
    pass


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "op", "name", "cache")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn=None,
                 op: str = "leaf", name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        self.name = name
        self.cache = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def label(self) -> str:
        return self.name if self.name is not None else self.op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"node {self.label!r} has shape {self.shape}, expected a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor({self.label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _node(value: np.ndarray, parents, backward_fn, op: str, name: str | None = None) -> Tensor:
    out = Tensor(value, parents, backward_fn, op, name)
    if not np.isfinite(out.data).all():
        raise NonFiniteError(f"node {out.label!r} produced a non-finite value")
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor, name) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"node {name or op!r}: cannot combine shapes {a.shape} ({a.label}) "
            f"and {b.shape} ({b.label})") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b, name: str | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b, name)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add", name)


def mul(a, b, name: str | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b, name)
    av, bv = a.data, b.data
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                 "mul", name)


def neg(a: Tensor, name: str | None = None) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg", name)


def scale(a: Tensor, c: float, name: str | None = None) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale", name)


def matmul(a: Tensor, b: Tensor, name: str | None = None) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"node {name or 'matmul'!r}: cannot multiply {a.shape} ({a.label}) "
            f"by {b.shape} ({b.label})")
    av, bv = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(av @ bv, (a, b), backward, "matmul", name)


# ---------------------------------------------------------------- elementwise

def relu(a: Tensor, name: str | None = None) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu", name)


def exp(a: Tensor, name: str | None = None) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp", name)


def log(a: Tensor, name: str | None = None) -> Tensor:
    av = a.data
    if (av <= 0).any():
        raise NonFiniteError(f"node {name or 'log'!r}: log of a nonpositive value from {a.label!r}")
    return _node(np.log(av), (a,), lambda g: (g / av,), "log", name)


def sigmoid(a: Tensor, name: str | None = None) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid", name)


def log_sigmoid(a: Tensor, name: str | None = None) -> Tensor:
    """log(sigmoid(a)) without underflow for large negative inputs."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s = _stable_sigmoid(-x)
    return _node(out, (a,), lambda g: (g * s,), "log_sigmoid", name)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False,
        name: str | None = None) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), backward, "sum", name)


def mean(a: Tensor, axis=None, keepdims: bool = False, name: str | None = None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis, keepdims), 1.0 / float(n), name=name)


def softmax(a: Tensor, axis: int = -1, name: str | None = None) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward, "softmax", name)


def log_softmax(a: Tensor, axis: int = -1, name: str | None = None) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    out = x - np.log(np.exp(x).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward, "log_softmax", name)


# ---------------------------------------------------------------- structure

def concat(xs: Sequence[Tensor], axis: int = -1, name: str | None = None) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
                x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax):
            raise ShapeError(
                f"node {name or 'concat'!r}: shapes {[t.shape for t in xs]} disagree off axis {axis}")
    sizes = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _node(np.concatenate([x.data for x in xs], axis=ax), xs, backward, "concat", name)


def reshape(a: Tensor, shape: tuple[int, ...], name: str | None = None) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"node {name or 'reshape'!r}: cannot reshape {old} to {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape", name)


def transpose(a: Tensor, axes: tuple[int, ...], name: str | None = None) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),),
                 "transpose", name)


def take(a: Tensor, index: np.ndarray, name: str | None = None) -> Tensor:
    """Row gather ``a[index]``; repeated indices accumulate in the gradient."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(
            f"node {name or 'take'!r}: index out of range for {a.shape[0]} rows of {a.label!r}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), backward, "take", name)


# ---------------------------------------------------------------- sampling

def gaussian_sample(mu: Tensor, sigma: Tensor, noise: np.ndarray | np.random.Generator,
                    name: str | None = None) -> Tensor:
    """Reparameterised draw ``mu + sigma * eps``.

    ``noise`` is either the standard-normal array itself or a generator from
    which it is drawn once; the draw is kept on the node (``.cache``) so the
    backward pass sees the same eps.
    """
    if mu.shape != sigma.shape:
        raise ShapeError(f"node {name or 'gaussian_sample'!r}: mu {mu.shape} vs sigma {sigma.shape}")
    if isinstance(noise, np.random.Generator):
        eps = noise.standard_normal(mu.shape)
    else:
        eps = np.asarray(noise, dtype=np.float64)
        if eps.shape != mu.shape:
            raise ShapeError(f"node {name or 'gaussian_sample'!r}: noise {eps.shape} vs mu {mu.shape}")
    out = _node(mu.data + sigma.data * eps, (mu, sigma), lambda g: (g, g * eps),
                "gaussian_sample", name)
    out.cache = eps
    return out


def columns(a: Tensor, lo: int, hi: int, name: str | None = None) -> Tensor:
    """``a[..., lo:hi]``."""
    if not 0 <= lo < hi <= a.shape[-1]:
        raise ShapeError(f"node {name or 'columns'!r}: slice {lo}:{hi} out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[..., lo:hi] = g
        return (out,)

    return _node(a.data[..., lo:hi], (a,), backward, "columns", name)
