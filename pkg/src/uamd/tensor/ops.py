"""Elementwise, reduction and shape operations on :class:`DiffTensor`."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import DiffTensor, as_tensor


def _pair(a, b) -> tuple[DiffTensor, DiffTensor]:
    if isinstance(a, DiffTensor) and not isinstance(b, DiffTensor):
        return a, DiffTensor(np.asarray(b), dtype=a.dtype)
    if isinstance(b, DiffTensor) and not isinstance(a, DiffTensor):
        return DiffTensor(np.asarray(a), dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- binary arithmetic --------------------------------------------------------

def add(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return DiffTensor._from_op(a.values + b.values, (a, b),
                               lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return DiffTensor._from_op(a.values - b.values, (a, b),
                               lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    av, bv = a.values, b.values

    def grad_fn(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return DiffTensor._from_op(av * bv, (a, b), grad_fn, "mul")


def div(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    av, bv = a.values, b.values
    out = av / bv

    def grad_fn(g):
        return (_unbroadcast(g / bv, av.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None)

    return DiffTensor._from_op(out, (a, b), grad_fn, "div")


def neg(x) -> DiffTensor:
    x = as_tensor(x)
    return DiffTensor._from_op(-x.values, (x,), lambda g: (-g,), "neg")


def scale(x, factor: float) -> DiffTensor:
    x = as_tensor(x)
    factor = x.dtype.type(factor)
    return DiffTensor._from_op(x.values * factor, (x,), lambda g: (g * factor,), "scale")


# -- unary elementwise ----------------------------------------------------------

def absolute(x) -> DiffTensor:
    x = as_tensor(x)
    sign = np.sign(x.values)
    return DiffTensor._from_op(np.abs(x.values), (x,), lambda g: (g * sign,), "abs")


def square(x) -> DiffTensor:
    x = as_tensor(x)
    v = x.values
    return DiffTensor._from_op(v * v, (x,), lambda g: (2 * g * v,), "square")


def sqrt(x) -> DiffTensor:
    x = as_tensor(x)
    out = np.sqrt(x.values)
    return DiffTensor._from_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(x) -> DiffTensor:
    x = as_tensor(x)
    out = np.exp(x.values)
    return DiffTensor._from_op(out, (x,), lambda g: (g * out,), "exp")


def reciprocal(x) -> DiffTensor:
    x = as_tensor(x)
    out = 1.0 / x.values
    return DiffTensor._from_op(out, (x,), lambda g: (-g * out * out,), "reciprocal")


def relu(x) -> DiffTensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.values > 0
    return DiffTensor._from_op(np.where(mask, x.values, 0).astype(x.dtype), (x,),
                               lambda g: (g * mask,), "relu")


def clamp_min(x, lower: float) -> DiffTensor:
    x = as_tensor(x)
    mask = x.values >= lower
    out = np.where(mask, x.values, x.dtype.type(lower))
    return DiffTensor._from_op(out, (x,), lambda g: (g * mask,), "clamp_min")


# -- reductions -------------------------------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> DiffTensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.values, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return DiffTensor._from_op(np.asarray(out, dtype=x.dtype), (x,), grad_fn, "sum")


def mean(x, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def masked_mean(x, mask: np.ndarray) -> DiffTensor:
    """Mean of ``x`` over entries where ``mask`` is true."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("masked_mean over an empty mask")
    weights = mask.astype(x.dtype) / x.dtype.type(n)
    out = np.asarray(np.sum(x.values * weights), dtype=x.dtype)
    return DiffTensor._from_op(out, (x,), lambda g: (g * weights,), "masked_mean")


# -- shape ops --------------------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> DiffTensor:
    x = as_tensor(x)
    original = x.shape
    return DiffTensor._from_op(x.values.reshape(shape), (x,),
                               lambda g: (g.reshape(original),), "reshape")


def transpose(x, axes: Sequence[int]) -> DiffTensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return DiffTensor._from_op(np.transpose(x.values, axes), (x,),
                               lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(x, index) -> DiffTensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype

    def grad_fn(g):
        full = np.zeros(shape, dtype=dtype)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return DiffTensor._from_op(np.array(x.values[index]), (x,), grad_fn, "getitem")


def _needs_add_at(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def broadcast_to(x, shape: Sequence[int]) -> DiffTensor:
    x = as_tensor(x)
    original = x.shape
    out = np.broadcast_to(x.values, shape).copy()
    return DiffTensor._from_op(out, (x,), lambda g: (_unbroadcast(g, original),), "broadcast_to")


def concat(inputs: Sequence, axis: int = 0) -> DiffTensor:
    """Stack tensors along an existing axis."""
    tensors = [as_tensor(t) for t in inputs]
    if not tensors:
        raise ValueError("concat needs at least one input")
    ndim = tensors[0].ndim
    axis = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ValueError(f"concat rank mismatch: {t.ndim} vs {ndim}")
        for ax in range(ndim):
            if ax != axis and t.shape[ax] != ref[ax]:
                raise ValueError(
                    f"concat extent mismatch on axis {ax}: {t.shape[ax]} vs {ref[ax]}")
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    return DiffTensor._from_op(out, tensors, lambda g: np.split(g, splits, axis=axis), "concat")


def pad_constant(x, pad_width: Sequence[tuple[int, int]]) -> DiffTensor:
    """Zero padding; ``pad_width`` follows ``np.pad``."""
    x = as_tensor(x)
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return DiffTensor._from_op(np.pad(x.values, pad_width), (x,), lambda g: (g[slices],), "pad")


# -- spatial differences and softmax ----------------------------------------------

def diff(x, axis: int) -> DiffTensor:
    """Forward difference ``x[i+1] - x[i]`` along ``axis`` (one shorter)."""
    x = as_tensor(x)
    axis = axis % x.ndim
    shape = x.shape
    out = np.diff(x.values, axis=axis)

    def grad_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        hi = [slice(None)] * len(shape)
        lo = [slice(None)] * len(shape)
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        full[tuple(hi)] += g
        full[tuple(lo)] -= g
        return (full,)

    return DiffTensor._from_op(out, (x,), grad_fn, "diff")


def diff_x(x) -> DiffTensor:
    """Horizontal forward difference over the last axis."""
    return diff(x, -1)


def diff_y(x) -> DiffTensor:
    """Vertical forward difference over the second-to-last axis."""
    return diff(x, -2)


def softmax(x, axis: int = 0) -> DiffTensor:
    x = as_tensor(x)
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return DiffTensor._from_op(s, (x,), grad_fn, "softmax")
