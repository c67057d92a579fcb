"""Sample containers shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DEPTH_M = 100.0


@dataclass(frozen=True)
class Calibration:
    focal_length_px: float
    baseline_m: float

    def __post_init__(self):
        if not (self.focal_length_px > 0 and self.baseline_m > 0):
            raise ValueError(f"calibration must be strictly positive, got {self}")

    @property
    def focal_baseline(self) -> float:
        """Depth (m) times disparity (px) for this rig."""
        return self.focal_length_px * self.baseline_m

    def disparity_to_depth(self, disparity: np.ndarray) -> np.ndarray:
        """Depth in meters; non-positive disparities map to 0 (invalid)."""
        disparity = np.asarray(disparity, dtype=np.float64)
        out = np.zeros(disparity.shape)
        ok = disparity > 0
        out[ok] = self.focal_baseline / disparity[ok]
        return out


def valid_count(depth: np.ndarray) -> int:
    return int(np.count_nonzero(depth > 0))


@dataclass(frozen=True, eq=False)
class StereoSample:
    """A rectified stereo pair with LiDAR and ground-truth depth.

    Images are ``[3, H, W]`` float arrays in ``[0, 1]``; depth maps are
    ``[H, W]`` in meters with 0 marking an invalid pixel.
    """

    left: np.ndarray
    right: np.ndarray
    sparse_left: np.ndarray
    sparse_right: np.ndarray
    gt: np.ndarray
    calib: Calibration
    sample_id: str = field(default="sample")

    def __post_init__(self):
        h, w = self.gt.shape
        for name in ("left", "right"):
            img = getattr(self, name)
            if img.shape != (3, h, w):
                raise ValueError(f"{name} image has shape {img.shape}, expected {(3, h, w)}")
            if img.size and (img.min() < 0 or img.max() > 1):
                raise ValueError(f"{name} image values must lie in [0, 1]")
        for name in ("sparse_left", "sparse_right"):
            depth = getattr(self, name)
            if depth.shape != (h, w):
                raise ValueError(f"{name} has shape {depth.shape}, expected {(h, w)}")
            if np.any(depth < 0) or not np.all(np.isfinite(depth)):
                raise ValueError(f"{name} must be finite and nonnegative")
        if valid_count(self.gt) < valid_count(self.sparse_left):
            raise ValueError("ground truth must be at least as dense as sparse_left")

    @property
    def height(self) -> int:
        return self.gt.shape[0]

    @property
    def width(self) -> int:
        return self.gt.shape[1]

    def replace(self, **changes) -> "StereoSample":
        from dataclasses import replace
        return replace(self, **changes)
