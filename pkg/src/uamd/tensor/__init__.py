"""Differentiable dense tensors with reverse-mode gradients."""

from .core import (
    DiffTensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    set_default_dtype,
)
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .ops import (
    absolute,
    add,
    broadcast_to,
    clamp_min,
    concat,
    diff,
    diff_x,
    diff_y,
    div,
    exp,
    getitem,
    masked_mean,
    mean,
    mul,
    neg,
    pad_constant,
    reciprocal,
    relu,
    reshape,
    scale,
    softmax,
    sqrt,
    square,
    sub,
    sum,
    transpose,
)
from .spatial import (
    ConvSpec,
    box_filter,
    conv2d,
    conv3d,
    correlation1d,
    interpolation_matrix,
    sample_horizontal,
    shift_volume,
    trilinear_upsample,
)

__all__ = [
    "ConvSpec", "DiffTensor", "absolute", "add", "as_tensor", "backward", "box_filter",
    "broadcast_to", "check_gradients", "clamp_min", "concat", "conv2d", "conv3d",
    "correlation1d", "default_dtype", "diff", "diff_x", "diff_y", "div", "exp",
    "get_default_dtype", "getitem", "interpolation_matrix", "masked_mean", "mean", "mul",
    "neg", "numerical_gradient", "pad_constant", "reciprocal", "relative_error", "relu",
    "reshape", "sample_horizontal", "scale", "set_default_dtype", "shift_volume", "softmax",
    "sqrt", "square", "sub", "sum", "transpose", "trilinear_upsample",
]
