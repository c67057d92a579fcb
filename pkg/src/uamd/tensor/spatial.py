"""Convolution, correlation, resampling and filtering on DiffTensors.

Layouts carry no batch axis: images are ``[C, H, W]`` and volumes are
``[C, D, H, W]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DiffTensor, as_tensor

_AXIS_NAMES = {2: ("height", "width"), 3: ("depth", "height", "width")}


@dataclass(frozen=True)
class ConvSpec:
    """Kernel geometry of a 2D or 3D convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, ...] = (3, 3)
    stride: tuple[int, ...] = (1, 1)
    padding: tuple[int, ...] = (1, 1)
    bias: bool = True

    def __post_init__(self):
        n = len(self.kernel)
        if n not in (2, 3):
            raise ValueError(f"kernel must be 2D or 3D, got {self.kernel}")
        if len(self.stride) != n or len(self.padding) != n:
            raise ValueError("kernel, stride and padding must have the same rank")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError(f"invalid geometry {self}")

    @classmethod
    def cube(cls, in_channels: int, out_channels: int, size: int = 3, stride: int = 1,
             padding: int | None = None, ndim: int = 3, bias: bool = True) -> "ConvSpec":
        """Isotropic kernel; padding defaults to 'same' for odd sizes."""
        if padding is None:
            padding = size // 2
        return cls(in_channels, out_channels, (size,) * ndim, (stride,) * ndim,
                   (padding,) * ndim, bias)

    @property
    def ndim(self) -> int:
        return len(self.kernel)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels, *self.kernel)

    def output_shape(self, spatial: Sequence[int]) -> tuple[int, ...]:
        names = _AXIS_NAMES[self.ndim]
        out = []
        for name, n, k, s, p in zip(names, spatial, self.kernel, self.stride, self.padding):
            extent = (n + 2 * p - k) // s + 1
            if n + 2 * p < k or extent < 1:
                raise ValueError(f"conv output {name} would be empty (input {n}, kernel {k}, "
                                 f"stride {s}, pad {p})")
            out.append(extent)
        return tuple(out)


def _convnd(x: DiffTensor, spec: ConvSpec, weight: DiffTensor, bias: DiffTensor | None) -> DiffTensor:
    n = spec.ndim
    names = _AXIS_NAMES[n]
    if x.ndim != n + 1:
        raise ValueError(f"conv{n}d expects a [C,{','.join(a[0].upper() for a in names)}] input, "
                         f"got shape {x.shape}")
    if x.shape[0] != spec.in_channels:
        raise ValueError(f"channel axis mismatch: input has {x.shape[0]}, spec expects "
                         f"{spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ValueError(f"weight shape {weight.shape} does not match spec {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.shape} does not match out channels {spec.out_channels}")
    out_spatial = spec.output_shape(x.shape[1:])

    pad = [(0, 0)] + [(p, p) for p in spec.padding]
    xp = np.pad(x.values, pad)
    windows = sliding_window_view(xp, spec.kernel, axis=tuple(range(1, n + 1)))
    windows = windows[(slice(None),) + tuple(slice(None, None, s) for s in spec.stride)]
    windows = windows[(slice(None),) + tuple(slice(0, o) for o in out_spatial)]
    # column matrix [C*K, O], kept for the weight gradient
    order = [0] + list(range(n + 1, 2 * n + 1)) + list(range(1, n + 1))
    cols = np.ascontiguousarray(windows.transpose(order)).reshape(-1, int(np.prod(out_spatial)))
    w = weight.values
    w2 = w.reshape(spec.out_channels, -1)
    out = (w2 @ cols).reshape((spec.out_channels,) + out_spatial)
    if bias is not None:
        out += bias.values.reshape((-1,) + (1,) * n)
    out = out.astype(x.dtype, copy=False)

    parents = (x, weight) if bias is None else (x, weight, bias)
    padded_shape = xp.shape
    col_shape = (spec.in_channels, *spec.kernel, *out_spatial)

    def grad_fn(g):
        g2 = g.reshape(spec.out_channels, -1)
        grads = []
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(col_shape)
            gxp = np.zeros(padded_shape, dtype=g.dtype)
            for offset in np.ndindex(*spec.kernel):
                target = (slice(None),) + tuple(
                    slice(k, k + s * (o - 1) + 1, s)
                    for k, s, o in zip(offset, spec.stride, out_spatial))
                gxp[target] += gcols[(slice(None),) + offset]
            inner = (slice(None),) + tuple(slice(p, p + m) for p, m in zip(spec.padding, x.shape[1:]))
            grads.append(gxp[inner])
        else:
            grads.append(None)
        if weight.requires_grad:
            grads.append((g2 @ cols.T).reshape(w.shape).astype(g.dtype, copy=False))
        else:
            grads.append(None)
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return grads

    return DiffTensor._from_op(out, parents, grad_fn, f"conv{n}d")


def conv2d(x, spec: ConvSpec, weight, bias=None) -> DiffTensor:
    """2D cross-correlation of a ``[C,H,W]`` input (no kernel flip, zero padding)."""
    if spec.ndim != 2:
        raise ValueError("conv2d needs a 2D ConvSpec")
    return _convnd(as_tensor(x), spec, as_tensor(weight), None if bias is None else as_tensor(bias))


def conv3d(x, spec: ConvSpec, weight, bias=None) -> DiffTensor:
    """3D cross-correlation of a ``[C,D,H,W]`` input."""
    if spec.ndim != 3:
        raise ValueError("conv3d needs a 3D ConvSpec")
    return _convnd(as_tensor(x), spec, as_tensor(weight), None if bias is None else as_tensor(bias))


def _shift_slices(width: int, d: int, direction: int) -> tuple[slice, slice]:
    """Destination columns and matching source columns for a horizontal shift.

    ``direction=+1`` pairs column ``x`` with ``x - d``; ``-1`` pairs it with ``x + d``.
    """
    if direction > 0:
        return slice(d, width), slice(0, width - d)
    return slice(0, width - d), slice(d, width)


def correlation1d(left, right, max_disp: int, direction: int = 1) -> DiffTensor:
    """Channel-averaged horizontal correlation volume ``[max_disp, H, W]``.

    ``out[d, y, x] = mean_c left[c, y, x] * right[c, y, x - d]`` for
    ``direction=+1`` (use ``-1`` to correlate against ``x + d``). Samples that
    fall outside the image contribute 0.
    """
    left, right = as_tensor(left), as_tensor(right)
    if left.shape != right.shape or left.ndim != 3:
        raise ValueError(f"correlation needs matching [C,H,W] inputs, got {left.shape} and {right.shape}")
    c, h, w = left.shape
    if max_disp < 1:
        raise ValueError("max_disp must be at least 1")
    if max_disp > w:
        raise ValueError(f"max_disp {max_disp} exceeds width {w}")
    lv, rv = left.values, right.values
    out = np.zeros((max_disp, h, w), dtype=lv.dtype)
    inv_c = lv.dtype.type(1.0 / c)
    for d in range(max_disp):
        dst, src = _shift_slices(w, d, direction)
        out[d, :, dst] = np.einsum("chw,chw->hw", lv[:, :, dst], rv[:, :, src]) * inv_c

    def grad_fn(g):
        gl = np.zeros_like(lv) if left.requires_grad else None
        gr = np.zeros_like(rv) if right.requires_grad else None
        for d in range(max_disp):
            dst, src = _shift_slices(w, d, direction)
            gd = g[d, :, dst] * inv_c
            if gl is not None:
                gl[:, :, dst] += gd * rv[:, :, src]
            if gr is not None:
                gr[:, :, src] += gd * lv[:, :, dst]
        return gl, gr

    return DiffTensor._from_op(out, (left, right), grad_fn, "correlation1d")


def shift_volume(x, n_disp: int, direction: int = 1) -> DiffTensor:
    """Stack horizontally shifted copies: ``out[c, d, y, x] = x[c, y, x - d]``.

    With ``direction=-1`` the source column is ``x + d``. Out-of-range columns are 0.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"shift_volume expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if not 1 <= n_disp <= w:
        raise ValueError(f"n_disp {n_disp} must lie in [1, {w}]")
    v = x.values
    out = np.zeros((c, n_disp, h, w), dtype=v.dtype)
    for d in range(n_disp):
        dst, src = _shift_slices(w, d, direction)
        out[:, d, :, dst] = v[:, :, src]

    def grad_fn(g):
        gx = np.zeros_like(v)
        for d in range(n_disp):
            dst, src = _shift_slices(w, d, direction)
            gx[:, :, src] += g[:, d, :, dst]
        return (gx,)

    return DiffTensor._from_op(out, (x,), grad_fn, "shift_volume")


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Align-corners linear interpolation weights of shape ``[n_out, n_in]``."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def trilinear_upsample(x, target: Sequence[int]) -> DiffTensor:
    """Align-corners trilinear upsampling of ``[C,D,H,W]`` to ``[C,*target]``."""
    x = as_tensor(x)
    if x.ndim != 4 or len(target) != 3:
        raise ValueError(f"trilinear_upsample expects [C,D,H,W] and a 3-tuple target, got {x.shape}")
    for name, n, t in zip(("depth", "height", "width"), x.shape[1:], target):
        if t < n:
            raise ValueError(f"trilinear_upsample cannot downsample {name} from {n} to {t}")
    mats = [interpolation_matrix(n, t, x.dtype) for n, t in zip(x.shape[1:], target)]
    out = x.values
    for axis, m in enumerate(mats, start=1):
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [axis])), 0, axis)

    def grad_fn(g):
        for axis, m in enumerate(mats, start=1):
            g = np.moveaxis(np.tensordot(m.T, g, axes=([1], [axis])), 0, axis)
        return (g,)

    return DiffTensor._from_op(np.ascontiguousarray(out), (x,), grad_fn, "trilinear_upsample")


def sample_horizontal(source, offset, sign: int = -1) -> tuple[DiffTensor, np.ndarray]:
    """Resample each row of ``source`` at ``x + sign * offset(x)`` with linear interpolation.

    Returns the resampled ``[C,H,W]`` tensor and a boolean ``[H,W]`` mask that
    is false where the sample position falls outside ``[0, W-1]`` (those
    outputs are 0 and pass no gradient).
    """
    source, offset = as_tensor(source), as_tensor(offset)
    if source.ndim != 3 or offset.shape != source.shape[1:]:
        raise ValueError(f"sample_horizontal needs [C,H,W] source and [H,W] offset, "
                         f"got {source.shape} and {offset.shape}")
    c, h, w = source.shape
    if w < 2:
        raise ValueError("sample_horizontal needs width >= 2")
    sv = source.values
    pos = np.arange(w, dtype=offset.dtype)[None, :] + sign * offset.values
    valid = (pos >= 0) & (pos <= w - 1)
    x0 = np.clip(np.floor(pos), 0, w - 2).astype(np.intp)
    frac = np.where(valid, pos - x0, 0).astype(sv.dtype)
    rows = np.arange(h)[:, None]
    lo = sv[:, rows, x0]
    hi = sv[:, rows, x0 + 1]
    vmask = valid.astype(sv.dtype)
    out = ((1 - frac) * lo + frac * hi) * vmask

    def grad_fn(g):
        g = g * vmask
        g_src = None
        if source.requires_grad:
            flat = (rows * w + x0).ravel()
            g_src = np.empty_like(sv)
            for ch in range(c):
                acc = np.bincount(flat, weights=(g[ch] * (1 - frac)).ravel(), minlength=h * w)
                acc += np.bincount(flat + 1, weights=(g[ch] * frac).ravel(), minlength=h * w)
                g_src[ch] = acc.reshape(h, w)
        g_off = None
        if offset.requires_grad:
            g_off = (sign * (g * (hi - lo)).sum(axis=0)).astype(offset.dtype, copy=False)
        return g_src, g_off

    return DiffTensor._from_op(out, (source, offset), grad_fn, "sample_horizontal"), valid


def _reflect_pad_adjoint(gp: np.ndarray, r: int, axis: int) -> np.ndarray:
    n = gp.shape[axis] - 2 * r
    gp = np.moveaxis(gp, axis, 0)
    gx = gp[r:r + n].copy()
    for i in range(r):
        gx[r - i] += gp[i]
        gx[n - 2 - i] += gp[r + n + i]
    return np.moveaxis(gx, 0, axis)


def box_filter(x, size: int = 3) -> DiffTensor:
    """Mean over a ``size x size`` window on the last two axes, reflect-padded."""
    x = as_tensor(x)
    if size % 2 != 1:
        raise ValueError("box_filter size must be odd")
    r = size // 2
    if min(x.shape[-2:]) <= r:
        raise ValueError(f"box_filter window {size} too large for {x.shape[-2:]}")
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x.values, pad, mode="reflect")
    h, w = x.shape[-2:]
    norm = x.dtype.type(1.0 / (size * size))
    out = np.zeros(x.shape, dtype=x.dtype)
    for dy in range(size):
        for dx in range(size):
            out += xp[..., dy:dy + h, dx:dx + w]
    out *= norm

    def grad_fn(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        gn = g * norm
        for dy in range(size):
            for dx in range(size):
                gp[..., dy:dy + h, dx:dx + w] += gn
        gp = _reflect_pad_adjoint(gp, r, gp.ndim - 2)
        return (_reflect_pad_adjoint(gp, r, gp.ndim - 1),)

    return DiffTensor._from_op(out, (x,), grad_fn, "box_filter")
