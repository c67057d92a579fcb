"""Reverse-mode autodiff over dense numpy arrays.

A :class:`DiffTensor` wraps a numpy array together with the record of the
operation that produced it.  Calling :func:`backward` on a scalar tensor walks
that record in reverse topological order and accumulates gradients into
``.grad`` of every reachable tensor that requires one.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class DiffTensor:
    """N-dimensional array with an operation record for backpropagation."""

    __slots__ = ("values", "grad", "requires_grad", "op", "_parents", "_backward", "__weakref__")

    # numpy defers binary operators with a DiffTensor on the right to us
    __array_priority__ = 1000

    def __init__(self, values, requires_grad: bool = False, dtype=None, *, op: str = "leaf",
                 parents: tuple["DiffTensor", ...] = (), backward_fn: BackwardFn | None = None):
        if dtype is None:
            if isinstance(values, (np.ndarray, np.generic)) and values.dtype in (np.float32, np.float64):
                dtype = values.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.values = np.asarray(values, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, values: np.ndarray, parents: Sequence["DiffTensor"], backward_fn: BackwardFn,
                 op: str) -> "DiffTensor":
        needs = any(p.requires_grad for p in parents)
        if not needs:
            return cls(values, op=op)
        return cls(values, requires_grad=True, op=op, parents=tuple(parents), backward_fn=backward_fn)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar; implementations live in ops ----------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __abs__(self):
        from . import ops
        return ops.absolute(self)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def _not_scalar(t: DiffTensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, dtype=None) -> DiffTensor:
    """Wrap ``x`` as a constant tensor unless it already is one."""
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(x, dtype=dtype)


def _topological_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: DiffTensor) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    Gradients accumulate: call ``zero_grad`` on leaves between passes.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
