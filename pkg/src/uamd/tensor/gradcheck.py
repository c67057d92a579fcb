"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import DiffTensor, backward


def numerical_gradient(fn: Callable[..., DiffTensor], arrays: Sequence[np.ndarray], index: int,
                       rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn(*tensors)`` w.r.t. ``arrays[index]``.

    The step at each entry is ``rel_step * max(1, |x|)``.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    for i in np.ndindex(*target.shape):
        x0 = target[i]
        h = rel_step * max(1.0, abs(x0))
        target[i] = x0 + h
        f_plus = fn(*[DiffTensor(a) for a in base]).item()
        target[i] = x0 - h
        f_minus = fn(*[DiffTensor(a) for a in base]).item()
        target[i] = x0
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad


def analytic_gradients(fn: Callable[..., DiffTensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    tensors = [DiffTensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    backward(out)
    return [np.zeros_like(t.values) if t.grad is None else t.grad for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[..., DiffTensor], arrays: Sequence[np.ndarray],
                    wrt: Sequence[int] | None = None, rel_step: float = 1e-5) -> float:
    """Worst relative error between backprop and finite differences.

    ``fn`` must map DiffTensors to a scalar DiffTensor. Evaluation is in double
    precision.
    """
    wrt = range(len(arrays)) if wrt is None else wrt
    analytic = analytic_gradients(fn, arrays)
    worst = 0.0
    for i in wrt:
        numeric = numerical_gradient(fn, arrays, i, rel_step)
        worst = max(worst, relative_error(analytic[i], numeric))
    return worst
