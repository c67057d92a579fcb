"""Random-dot stereo scenes built from fronto-parallel planes.

Each plane carries its own texture indexed by left-image column, so any
non-occluded right pixel warped back by its integer disparity reproduces the
left image exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .sample import Calibration, StereoSample

SYNTH_CALIBRATION = Calibration(focal_length_px=100.0, baseline_m=0.5)


@dataclass(frozen=True)
class SynthTruth:
    """Exact geometry of a synthetic scene; -1 labels mark uncovered pixels."""

    disparity_left: np.ndarray
    disparity_right: np.ndarray
    nonoccluded_left: np.ndarray
    nonoccluded_right: np.ndarray
    labels_left: np.ndarray
    labels_right: np.ndarray


def sparsify(gt: np.ndarray, keep_fraction: float, seed: int | None = None) -> np.ndarray:
    """Keep each valid pixel independently with probability ``keep_fraction``."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    rng = np.random.default_rng(seed)
    keep = rng.random(gt.shape) < keep_fraction
    return np.where(keep & (gt > 0), gt, 0).astype(gt.dtype)


def random_dot_texture(rng: np.random.Generator, shape: tuple[int, ...], blur_px: float) -> np.ndarray:
    """Gaussian-blurred noise over the last two axes, quantized to 8 bits."""
    noise = rng.standard_normal(shape)
    if blur_px > 0:
        sigma = (0,) * (len(shape) - 2) + (blur_px, blur_px)
        noise = gaussian_filter(noise, sigma=sigma)
    noise = (noise - noise.mean()) / noise.std()
    return (np.rint(np.clip(0.5 + 0.2 * noise, 0, 1) * 255) / 255).astype(np.float32)


def _rectangles(rng: np.random.Generator, n: int, height: int, width: int) -> list[tuple[int, int, int, int]]:
    rects = [(0, height, 0, width)]
    for _ in range(n - 1):
        h = int(rng.integers(max(2, height // 4), max(3, height // 2) + 1))
        w = int(rng.integers(max(2, width // 6), max(3, width // 3) + 1))
        y0 = int(rng.integers(0, height - h + 1))
        x0 = int(rng.integers(0, width - w + 1))
        rects.append((y0, y0 + h, x0, x0 + w))
    return rects


def synth_scene(height: int, width: int, n_planes: int, max_disp: int, seed: int = 0, *,
                min_disp: int = 1, disparities: Sequence[int] | None = None,
                keep_fraction: float = 0.05, blur_px: float = 2.0,
                calib: Calibration = SYNTH_CALIBRATION, sample_id: str | None = None,
                ) -> tuple[StereoSample, SynthTruth]:
    """Generate a stereo sample and its exact disparity/occlusion truth.

    Plane 0 fills the frame; later planes are rectangles drawn nearer to the
    camera. Disparities are distinct integers in ``[1, max_disp]`` sorted so
    that later planes are nearer, unless ``disparities`` is given.
    ``min_disp`` raises the lower bound to limit the far-depth range.
    Textures are noise blurred by ``blur_px`` so they stay matchable at
    reduced resolution.
    """
    if max_disp * 4 >= width:
        raise ValueError(f"max_disp {max_disp} must be below width/4 ({width / 4})")
    if n_planes < 1 or not 1 <= min_disp <= max_disp:
        raise ValueError("need at least one plane and 1 <= min_disp <= max_disp")
    rng = np.random.default_rng(seed)
    if disparities is None:
        pool = np.arange(min_disp, max_disp + 1)
        disp = np.sort(rng.choice(pool, size=n_planes, replace=n_planes > len(pool)))
    else:
        disp = np.asarray(disparities, dtype=int)
        if len(disp) != n_planes or disp.min() < min_disp or disp.max() > max_disp:
            raise ValueError("disparities must list one value in [min_disp, max_disp] per plane")
        if np.any(np.diff(disp) < 0):
            raise ValueError("disparities must be non-decreasing (later planes are nearer)")
    rects = _rectangles(rng, n_planes, height, width)
    # 8-bit quantized so the scene survives PNG round trips unchanged
    textures = random_dot_texture(rng, (n_planes, 3, height, width), blur_px)

    ys, xs = np.mgrid[0:height, 0:width]
    labels_left = np.full((height, width), -1)
    labels_right = np.full((height, width), -1)
    for k, (y0, y1, x0, x1) in enumerate(rects):
        in_rows = (ys >= y0) & (ys < y1)
        labels_left[in_rows & (xs >= x0) & (xs < x1)] = k
        src = xs + disp[k]
        labels_right[in_rows & (src >= x0) & (src < x1)] = k

    plane_l = np.maximum(labels_left, 0)
    left = textures[plane_l, :, ys, xs].transpose(2, 0, 1)
    covered_r = labels_right >= 0
    plane_r = np.maximum(labels_right, 0)
    src_r = np.clip(xs + disp[plane_r], 0, width - 1)
    right = textures[plane_r, :, ys, src_r].transpose(2, 0, 1)
    fill = random_dot_texture(rng, (3, height, width), blur_px)
    right = np.where(covered_r[None], right, fill)

    disp_left = disp[plane_l].astype(np.float32)
    disp_right = np.where(covered_r, disp[plane_r], 0).astype(np.float32)

    xr = xs - disp[plane_l]
    nonocc_left = (xr >= 0) & (labels_right[ys, np.clip(xr, 0, width - 1)] == labels_left)
    nonocc_right = covered_r & (labels_left[ys, src_r] == labels_right)

    fb = calib.focal_baseline
    gt_left = (fb / disp_left).astype(np.float32)
    gt_right = np.where(covered_r, fb / np.maximum(disp_right, 1), 0).astype(np.float32)
    sparse_left = sparsify(gt_left, keep_fraction, seed=rng.integers(2**32))
    sparse_right = sparsify(gt_right, keep_fraction, seed=rng.integers(2**32))

    sample = StereoSample(
        left=np.ascontiguousarray(left, dtype=np.float32),
        right=np.ascontiguousarray(right, dtype=np.float32),
        sparse_left=sparse_left, sparse_right=sparse_right, gt=gt_left, calib=calib,
        sample_id=sample_id or f"synth{seed:06d}")
    truth = SynthTruth(disp_left, disp_right, nonocc_left, nonocc_right, labels_left, labels_right)
    return sample, truth


def synth_dataset(count: int, height: int, width: int, n_planes: int, max_disp: int, seed: int = 0,
                  **kwargs) -> list[tuple[StereoSample, SynthTruth]]:
    """``count`` scenes with seeds derived from ``seed``."""
    seeds = np.random.default_rng(seed).integers(0, 2**31, size=count)
    return [synth_scene(height, width, n_planes, max_disp, int(s), sample_id=f"{i:06d}", **kwargs)
            for i, s in enumerate(seeds)]
