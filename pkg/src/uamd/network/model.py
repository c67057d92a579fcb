"""Forward model: encoder branches, conditional fusion/aggregation, regression."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .. import tensor as T
from ..data.sample import Calibration, StereoSample
from ..tensor import DiffTensor
from .config import ModalCombo, NetworkConfig
from .params import BRANCH_INPUTS, ModelParams, branch_specs, cfal_specs, mfa_specs

SIDES = ("left", "right")


class Prediction(NamedTuple):
    disparity: DiffTensor  # [H, W] pixels
    depth: DiffTensor  # [H, W] meters


@dataclass
class StereoFeatures:
    reference: DiffTensor  # features of the view the disparity is predicted for
    other: DiffTensor
    correlation: DiffTensor  # [D/fs, H/fs, W/fs]
    direction: int  # +1: other view sampled at x - d (left reference); -1: at x + d


@dataclass
class BranchOutputs:
    stereo: StereoFeatures | None = None
    depth: DiffTensor | None = None
    image: DiffTensor | None = None


def _as_input(x, dtype) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(np.asarray(x), dtype=dtype)


def _check_extent(shape: tuple[int, ...], config: NetworkConfig) -> None:
    h, w = shape[-2:]
    fs = config.feature_scale
    for name, n in (("height", h), ("width", w)):
        if n % fs:
            raise ValueError(f"image {name} {n} is not divisible by feature_scale {fs}")
    if config.volume_disparities > w // fs:
        raise ValueError(f"max_disparity {config.max_disparity} exceeds image width {w}")


def _encode(x: DiffTensor, params: ModelParams, config: NetworkConfig, branch: str) -> DiffTensor:
    keep = set(config.feature_layers)
    feats = []
    for i, spec in enumerate(branch_specs(config, BRANCH_INPUTS[branch])):
        prefix = f"{branch}.conv{i}"
        x = T.relu(T.conv2d(x, spec, params[f"{prefix}.weight"], params[f"{prefix}.bias"]))
        if i in keep:
            feats.append(x)
    return T.concat(feats, axis=0)


def normalize_channels(feat: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Zero-mean feature vector of norm sqrt(C) at every pixel (channel axis 0).

    A channel-averaged correlation of two such vectors is their cosine similarity.
    """
    centered = feat - T.mean(feat, axis=0, keepdims=True)
    norm = T.sqrt(T.mean(T.square(centered), axis=0, keepdims=True) + eps)
    return centered / norm


def mfe_stereo_branch(left, right, params: ModelParams, config: NetworkConfig,
                      side: str = "left") -> StereoFeatures:
    """Shared-weight features of both views plus their correlation volume.

    The correlation is taken between channel-normalized features so that it
    measures pattern similarity rather than feature magnitude.

    For ``side="right"`` the right view is the reference and the correlation
    runs in the opposite shift direction.
    """
    dtype = np.dtype(config.dtype)
    left, right = _as_input(left, dtype), _as_input(right, dtype)
    if left.shape != right.shape:
        raise ValueError(f"stereo images differ in shape: {left.shape} vs {right.shape}")
    _check_extent(left.shape, config)
    f_left = _encode(left, params, config, "stereo")
    f_right = _encode(right, params, config, "stereo")
    if side == "left":
        ref, other, direction = f_left, f_right, 1
    elif side == "right":
        ref, other, direction = f_right, f_left, -1
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    corr = T.correlation1d(normalize_channels(ref), normalize_channels(other),
                           config.volume_disparities, direction)
    return StereoFeatures(ref, other, corr, direction)


def mfe_depth_branch(image, sparse, params: ModelParams, config: NetworkConfig) -> DiffTensor:
    """Encode an RGB image stacked with its normalized sparse depth (invalid = 0)."""
    dtype = np.dtype(config.dtype)
    image = _as_input(image, dtype)
    sparse = np.asarray(sparse.values if isinstance(sparse, DiffTensor) else sparse)
    if sparse.shape != image.shape[1:]:
        raise ValueError(f"sparse depth {sparse.shape} does not match image {image.shape[1:]}")
    _check_extent(image.shape, config)
    depth = np.where(sparse > 0, np.minimum(sparse, config.max_depth_m) / config.max_depth_m, 0)
    x = T.concat([image, DiffTensor(depth[None].astype(dtype))], axis=0)
    return _encode(x, params, config, "depth")


def mfe_image_branch(image, params: ModelParams, config: NetworkConfig) -> DiffTensor:
    image = _as_input(image, np.dtype(config.dtype))
    _check_extent(image.shape, config)
    return _encode(image, params, config, "image")


def _broadcast_disparity(feat: DiffTensor, n_disp: int) -> DiffTensor:
    c, h, w = feat.shape
    return T.broadcast_to(T.reshape(feat, (c, 1, h, w)), (c, n_disp, h, w))


def cffl_fuse(outputs: BranchOutputs, combo: ModalCombo, config: NetworkConfig) -> DiffTensor:
    """Assemble the 4D cost volume ``[C, D/fs, H/fs, W/fs]`` for ``combo``.

    Branch outputs the combo excludes are ignored. A normalized disparity
    coordinate channel is always appended.
    """
    n = config.volume_disparities
    if outputs.image is None:
        raise ValueError(f"{combo}: image branch output is required")
    parts = []
    if combo.uses_stereo:
        st = outputs.stereo
        if st is None:
            raise ValueError(f"{combo}: stereo branch output is required")
        c, h, w = st.reference.shape
        parts += [T.reshape(st.correlation, (1, n, h, w)),
                  _broadcast_disparity(st.reference, n),
                  T.shift_volume(st.other, n, st.direction)]
    if combo.uses_lidar:
        if outputs.depth is None:
            raise ValueError(f"{combo}: depth branch output is required")
        parts.append(_broadcast_disparity(outputs.depth, n))
    parts.append(_broadcast_disparity(outputs.image, n))
    _, _, h, w = parts[-1].shape
    coord = np.arange(n, dtype=np.dtype(config.dtype)) / max(n - 1, 1)
    parts.append(DiffTensor(np.broadcast_to(coord[None, :, None, None], (1, n, h, w)).copy()))
    volume = T.concat(parts, axis=0)
    assert volume.shape[0] == config.volume_channels(combo)
    return volume


def cfal_aggregate(cv: DiffTensor, combo: ModalCombo, params: ModelParams,
                   config: NetworkConfig) -> DiffTensor:
    """Two conv3d+ReLU layers chosen by ``combo``; output width is fixed."""
    expected = config.volume_channels(combo)
    if cv.shape[0] != expected:
        raise ValueError(f"{combo} cost volume must have {expected} channels, got {cv.shape[0]}")
    x = cv
    for i, spec in enumerate(cfal_specs(config, combo)):
        prefix = f"cfal.{combo.key}.conv{i}"
        x = T.relu(T.conv3d(x, spec, params[f"{prefix}.weight"], params[f"{prefix}.bias"]))
    return x


def mfa(cv: DiffTensor, params: ModelParams, config: NetworkConfig) -> DiffTensor:
    """Six 3x3x3 convolutions in three residual blocks, then a 1-channel cost map."""
    if cv.shape[0] != config.aggregated_channels:
        raise ValueError(f"aggregator expects {config.aggregated_channels} channels, got {cv.shape[0]}")
    specs = mfa_specs(config)
    x = cv
    for b in range(3):
        p0, p1 = f"mfa.block{b}.conv0", f"mfa.block{b}.conv1"
        y = T.relu(T.conv3d(x, specs[p0], params[f"{p0}.weight"], params[f"{p0}.bias"]))
        y = T.conv3d(y, specs[p1], params[f"{p1}.weight"], params[f"{p1}.bias"])
        x = x + y
    return T.conv3d(x, specs["mfa.out"], params["mfa.out.weight"], params["mfa.out.bias"])


def soft_argmax(cost: DiffTensor) -> tuple[DiffTensor, DiffTensor]:
    """Expected disparity under ``softmax(-cost)`` over axis 0 of ``[D, H, W]``."""
    prob = T.softmax(T.neg(cost), axis=0)
    bins = np.arange(cost.shape[0], dtype=cost.dtype).reshape(-1, 1, 1)
    return T.sum(prob * bins, axis=0), prob


def drl(cost: DiffTensor, calib: Calibration, config: NetworkConfig,
        image_size: tuple[int, int] | None = None) -> Prediction:
    """Upsample the cost to full resolution, regress disparity and convert to depth."""
    if cost.ndim != 4 or cost.shape[0] != 1:
        raise ValueError(f"cost must be [1, D/fs, H/fs, W/fs], got {cost.shape}")
    fs = config.feature_scale
    if image_size is None:
        image_size = (cost.shape[2] * fs, cost.shape[3] * fs)
    full = T.trilinear_upsample(cost, (config.max_disparity, *image_size))
    disparity, _ = soft_argmax(T.reshape(full, full.shape[1:]))
    depth = T.scale(T.reciprocal(T.clamp_min(disparity, config.min_disparity_eps)),
                    calib.focal_baseline)
    return Prediction(disparity, depth)


def run_branches(sample: StereoSample, combo: ModalCombo, params: ModelParams,
                 config: NetworkConfig, side: str = "left", images=None) -> BranchOutputs:
    """Evaluate only the branches ``combo`` reads.

    ``images`` may override ``(left, right)`` with DiffTensors, e.g. to take
    gradients with respect to the input pixels.
    """
    left, right = images if images is not None else (sample.left, sample.right)
    ref_img = left if side == "left" else right
    out = BranchOutputs(image=mfe_image_branch(ref_img, params, config))
    if combo.uses_stereo:
        out.stereo = mfe_stereo_branch(left, right, params, config, side)
    if combo.uses_lidar:
        sparse = sample.sparse_left if side == "left" else sample.sparse_right
        out.depth = mfe_depth_branch(ref_img, sparse, params, config)
    return out


def forward(sample: StereoSample, combo: ModalCombo, params: ModelParams, config: NetworkConfig,
            side: str = "left", images=None) -> Prediction:
    """Disparity and depth for the ``side`` view using the inputs ``combo`` allows.

    Left is the inference view; the right view is used for semi-supervised
    training, which needs stereo features.
    """
    combo = ModalCombo.parse(combo)
    if side not in SIDES:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if side == "right" and not combo.uses_stereo:
        raise ValueError("right-view prediction needs stereo input; mono_lidar has none")
    outputs = run_branches(sample, combo, params, config, side, images)
    volume = cffl_fuse(outputs, combo, config)
    cost = mfa(cfal_aggregate(volume, combo, params, config), params, config)
    return drl(cost, sample.calib, config, (sample.height, sample.width))
