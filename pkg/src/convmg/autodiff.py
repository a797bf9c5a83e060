"""
Minimal reverse-mode differentiation for the convolutional cycle.

Only what the multigrid network needs is supported: the three convolutions,
addition, scaling by constants, and division by a differentiable scalar grid
(the exact coarse solve). Functions in this module accept either plain arrays
or :class:`Var` objects; with plain arrays they fall through to
:mod:`convmg.fields` with no recording overhead, so the same cycle code runs
in evaluation and in training.
"""
import itertools

import numpy as np

from . import fields

_counter = itertools.count()


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Var:
    """An array value that records how it was computed."""

    __array_ufunc__ = None  # make ndarray defer to the reflected operators

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self._order = next(_counter)

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Var(shape={self.shape})"

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, seed):
        """Propagate cotangent ``seed`` to every ancestor's ``grad``."""
        nodes, seen, stack = [], set(), [self]
        while stack:
            v = stack.pop()
            if id(v) in seen:
                continue
            seen.add(id(v))
            nodes.append(v)
            stack.extend(p for p in v._parents if isinstance(p, Var))
        nodes.sort(key=lambda v: v._order, reverse=True)
        self._accumulate(np.asarray(seed, dtype=float))
        for v in nodes:
            if v._backward is not None and v.grad is not None:
                v._backward(v.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        return add(other, scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)


def value(x):
    return x.value if isinstance(x, Var) else x


def add(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a + b
    va, vb = value(a), value(b)
    out = Var(va + vb, (a, b))

    def backward(g):
        if isinstance(a, Var):
            a._accumulate(_unbroadcast(g, va.shape))
        if isinstance(b, Var):
            b._accumulate(_unbroadcast(g, vb.shape))

    out._backward = backward
    return out


def scale(x, c):
    """Multiply ``x`` by a constant scalar or constant array ``c``."""
    if isinstance(c, Var):
        raise TypeError("scale() expects a constant factor")
    if not isinstance(x, Var):
        return x * c
    out = Var(x.value * c, (x,))
    out._backward = lambda g: x._accumulate(_unbroadcast(g * c, x.shape))
    return out


def divide(x, a):
    """``x / a`` where ``a`` broadcasts against ``x`` (e.g. a 1x1 grid)."""
    if not isinstance(x, Var) and not isinstance(a, Var):
        return x / a
    vx, va = value(x), value(a)
    out = Var(vx / va, (x, a))

    def backward(g):
        if isinstance(x, Var):
            x._accumulate(_unbroadcast(g / va, vx.shape))
        if isinstance(a, Var):
            a._accumulate(_unbroadcast(-g * vx / va ** 2, va.shape))

    out._backward = backward
    return out


def conv_same(f, k):
    if not isinstance(f, Var) and not isinstance(k, Var):
        return fields.conv_same(f, k)
    vf, vk = value(f), value(k)
    out = Var(fields.conv_same(vf, vk), (f, k))

    def backward(g):
        if isinstance(f, Var):
            f._accumulate(fields.conv_same_adjoint_field(g, vk))
        if isinstance(k, Var):
            k._accumulate(fields.conv_same_adjoint_kernel(g, vf, vk.shape[0]))

    out._backward = backward
    return out


def conv_down(f, k, stride=(2, 2)):
    if not isinstance(f, Var) and not isinstance(k, Var):
        return fields.conv_down(f, k, stride)
    vf, vk = value(f), value(k)
    out = Var(fields.conv_down(vf, vk, stride), (f, k))

    def backward(g):
        if isinstance(f, Var):
            f._accumulate(fields.conv_down_adjoint_field(g, vk, vf.shape, stride))
        if isinstance(k, Var):
            k._accumulate(fields.conv_down_adjoint_kernel(g, vf, vk.shape[0], stride))

    out._backward = backward
    return out


def conv_up(f, k, out_shape, stride=(2, 2)):
    if not isinstance(f, Var) and not isinstance(k, Var):
        return fields.conv_up(f, k, out_shape, stride)
    vf, vk = value(f), value(k)
    out = Var(fields.conv_up(vf, vk, out_shape, stride), (f, k))

    def backward(g):
        if isinstance(f, Var):
            f._accumulate(fields.conv_up_adjoint_field(g, vk, stride))
        if isinstance(k, Var):
            k._accumulate(fields.conv_up_adjoint_kernel(g, vf, vk.shape[0], stride))

    out._backward = backward
    return out
