"""Training objectives: supervised L2, sparse L1 terms, photometric and smoothness losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import minimum_filter

from . import tensor as T
from .tensor import DiffTensor

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class EmptySupervision(ValueError):
    """Raised when a loss has no valid pixel to average over."""


@dataclass(frozen=True)
class LossWeights:
    w_l: float = 1.0
    w_p: float = 1.3
    w_g: float = 0.01
    w_n: float = 0.1

    def __post_init__(self):
        values = (self.w_l, self.w_p, self.w_g, self.w_n)
        if any(not np.isfinite(w) or w < 0 for w in values):
            raise ValueError(f"loss weights must be finite and nonnegative, got {values}")
        if not any(w > 0 for w in values):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85
    ssim_window: int = 3

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be a positive odd size, got {self.ssim_window}")


class LossComponents(NamedTuple):
    lidar: DiffTensor | float
    photometric: DiffTensor | float
    gradient: DiffTensor | float
    noise: DiffTensor | float | None = None


def valid_mask(depth_map) -> tuple[np.ndarray, int]:
    """Strictly positive entries and their count."""
    values = depth_map.values if isinstance(depth_map, DiffTensor) else np.asarray(depth_map)
    mask = values > 0
    return mask, int(mask.sum())


def _masked(pred, target, kind: str, what: str) -> DiffTensor:
    target = np.asarray(target)
    pred = T.as_tensor(pred)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and {what} {target.shape} differ in shape")
    mask, n = valid_mask(target)
    if n == 0:
        raise EmptySupervision(f"{what} has no valid pixels")
    err = pred - target.astype(pred.dtype)
    return T.masked_mean(T.square(err) if kind == "l2" else T.absolute(err), mask)


def loss_sup(pred, gt) -> DiffTensor:
    """Mean squared depth error over pixels with ground truth."""
    return _masked(pred, gt, "l2", "ground truth")


def loss_lidar(pred, sparse_gt) -> DiffTensor:
    """Mean absolute error against the sparse LiDAR depth."""
    return _masked(pred, sparse_gt, "l1", "sparse depth")


def loss_noise(pred, noise_depth) -> DiffTensor:
    """Mean absolute error against stereo-matching (noisy) depth labels."""
    return _masked(pred, noise_depth, "l1", "noise labels")


def warp_image(source, disparity, direction: int = 1) -> tuple[DiffTensor, np.ndarray]:
    """Reconstruct a view by sampling ``source`` at ``x - direction * disparity(x)``.

    ``direction=1`` rebuilds the left view from the right image with left
    disparity; ``direction=-1`` rebuilds the right view from the left image.
    Samples outside the image are 0 and flagged false in the returned mask.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    source, disparity = T.as_tensor(source), T.as_tensor(disparity)
    if source.shape[1:] != disparity.shape:
        raise ValueError(f"source {source.shape} and disparity {disparity.shape} extents differ")
    return T.sample_horizontal(source, disparity, sign=-direction)


def ssim(a, b, window: int = 3) -> DiffTensor:
    """Per-pixel SSIM with box windows, averaged over channels of ``[C,H,W]`` inputs."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    mu_a, mu_b = T.box_filter(a, window), T.box_filter(b, window)
    var_a = T.box_filter(T.square(a), window) - T.square(mu_a)
    var_b = T.box_filter(T.square(b), window) - T.square(mu_b)
    cov = T.box_filter(a * b, window) - mu_a * mu_b
    num = (T.scale(mu_a * mu_b, 2.0) + SSIM_C1) * (T.scale(cov, 2.0) + SSIM_C2)
    den = (T.square(mu_a) + T.square(mu_b) + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return T.mean(num / den, axis=0)


def loss_photometric(image, reconstruction, validity_mask, cfg: PhotometricConfig = PhotometricConfig()) -> DiffTensor:
    """Blend of SSIM dissimilarity and L1 over pixels whose SSIM window is fully valid.

    The mask is eroded by the SSIM window so that pixels bordering invalid
    reconstructions do not see them through the window.
    """
    reconstruction = T.as_tensor(reconstruction)
    if not isinstance(image, DiffTensor):
        image = DiffTensor(np.asarray(image), dtype=reconstruction.dtype)
    mask = np.asarray(validity_mask, dtype=bool)
    if mask.shape != image.shape[1:]:
        raise ValueError(f"validity mask {mask.shape} does not match image {image.shape[1:]}")
    mask = minimum_filter(mask, size=cfg.ssim_window, mode="mirror")
    if not mask.any():
        raise EmptySupervision("photometric loss has no valid pixels")
    l1 = T.mean(T.absolute(image - reconstruction), axis=0)
    per_pixel = l1 if cfg.alpha == 0 else (
        T.scale(1.0 - ssim(image, reconstruction, cfg.ssim_window), cfg.alpha / 2) + T.scale(l1, 1 - cfg.alpha))
    return T.masked_mean(per_pixel, mask)


def loss_gradient(disparity, image) -> DiffTensor:
    """Edge-aware smoothness: forward differences damped by ``exp(-|dI|)`` (channel L1)."""
    disparity = T.as_tensor(disparity)
    image = np.asarray(image.values if isinstance(image, DiffTensor) else image)
    if image.shape[1:] != disparity.shape:
        raise ValueError(f"image {image.shape} and disparity {disparity.shape} extents differ")
    dtype = disparity.dtype
    wx = np.exp(-np.abs(np.diff(image, axis=2)).sum(axis=0)).astype(dtype)
    wy = np.exp(-np.abs(np.diff(image, axis=1)).sum(axis=0)).astype(dtype)
    terms = []
    if disparity.shape[1] > 1:
        terms.append(T.mean(T.absolute(T.diff_x(disparity)) * wx))
    if disparity.shape[0] > 1:
        terms.append(T.mean(T.absolute(T.diff_y(disparity)) * wy))
    if not terms:
        return T.as_tensor(np.zeros((), dtype=dtype))
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def loss_semi(components: LossComponents, weights: LossWeights = LossWeights()) -> DiffTensor:
    """Weighted sum of the semi-supervised terms; a missing noise term counts as 0."""
    total = None
    for term, w in ((components.lidar, weights.w_l), (components.photometric, weights.w_p),
                    (components.gradient, weights.w_g), (components.noise, weights.w_n)):
        if term is None or w == 0:
            continue
        part = term * w
        total = part if total is None else total + part
    if total is None:
        total = 0.0
    if isinstance(total, DiffTensor):
        return total
    return DiffTensor(np.asarray(total, dtype=np.float64))
