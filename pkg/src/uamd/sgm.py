"""Semi-global matching used to produce noisy depth labels for semi-supervised training."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .data.dataset import NOISE_SUFFIX
from .data.depth_io import write_depth
from .data.sample import MAX_DEPTH_M, Calibration, StereoSample

log = logging.getLogger(__name__)

PATHS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
PATHS_8 = PATHS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))
CENSUS_RADIUS = 2
SAD_RADIUS = 1


@dataclass(frozen=True)
class SgmConfig:
    max_disp: int = 64
    p1: float = 10.0
    p2: float = 120.0
    num_paths: int = 8
    cost_kind: str = "census"
    lr_check_tol: int = 1

    def __post_init__(self):
        if self.max_disp < 1:
            raise ValueError(f"max_disp must be >= 1, got {self.max_disp}")
        if not 0 <= self.p1 <= self.p2:
            raise ValueError(f"need 0 <= p1 <= p2, got p1={self.p1}, p2={self.p2}")
        if self.num_paths not in (4, 8):
            raise ValueError(f"num_paths must be 4 or 8, got {self.num_paths}")
        if self.cost_kind not in ("census", "sad"):
            raise ValueError(f"cost_kind must be 'census' or 'sad', got {self.cost_kind!r}")
        if self.lr_check_tol < 0:
            raise ValueError("lr_check_tol must be nonnegative")

    @property
    def paths(self) -> tuple[tuple[int, int], ...]:
        return PATHS_4 if self.num_paths == 4 else PATHS_8

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SgmResult:
    disparity_left: np.ndarray  # int, -1 where the LR check failed
    disparity_right: np.ndarray  # raw winner-take-all, right view
    depth: np.ndarray  # float32 meters, 0 = invalid


@dataclass
class NoiseReport:
    written: list[Path] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


def _intensity(image: np.ndarray) -> np.ndarray:
    """Sum of 8-bit channel values, so every cost is integer-valued."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return np.rint(np.clip(image, 0, 1) * 255).sum(axis=0).astype(np.int32)
    return np.rint(np.clip(image, 0, 1) * 255).astype(np.int32)


def max_cost(cfg: SgmConfig) -> float:
    if cfg.cost_kind == "census":
        return float((2 * CENSUS_RADIUS + 1) ** 2 - 1)
    return float((2 * SAD_RADIUS + 1) ** 2 * 3 * 255)


def _cost_hwd(ref: np.ndarray, other: np.ndarray, cfg: SgmConfig) -> np.ndarray:
    """Cost of matching ref(x) with other(x - d) as [H, W, D]."""
    if cfg.cost_kind == "census":
        cr = _kernels.census_transform(np.ascontiguousarray(ref), CENSUS_RADIUS)
        co = _kernels.census_transform(np.ascontiguousarray(other), CENSUS_RADIUS)
        return _kernels.census_cost(cr, co, cfg.max_disp, max_cost(cfg))
    r = SAD_RADIUS
    h, w = ref.shape
    out = np.full((h, w, cfg.max_disp), max_cost(cfg))
    for d in range(min(cfg.max_disp, w)):
        diff = np.abs(ref[:, d:] - other[:, :w - d])
        padded = np.pad(diff, r, mode="edge")
        out[:, d:, d] = sliding_window_view(padded, (2 * r + 1, 2 * r + 1)).sum(axis=(2, 3))
    return out


def _check_pair(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = _intensity(left), _intensity(right)
    if a.shape != b.shape:
        raise ValueError(f"stereo images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def matching_cost(left: np.ndarray, right: np.ndarray, cfg: SgmConfig = SgmConfig(),
                  view: str = "left") -> np.ndarray:
    """``[D, H, W]`` cost of each disparity; maximal where the match falls off the image.

    For ``view="right"`` the right pixel x is matched against left pixel x + d.
    """
    a, b = _check_pair(left, right)
    if view == "left":
        hwd = _cost_hwd(a, b, cfg)
    elif view == "right":
        hwd = _cost_hwd(b[:, ::-1], a[:, ::-1], cfg)[:, ::-1]
    else:
        raise ValueError(f"view must be 'left' or 'right', got {view!r}")
    return np.ascontiguousarray(hwd.transpose(2, 0, 1))


def aggregate_path(cost: np.ndarray, p1: float, p2: float, direction: tuple[int, int]) -> np.ndarray:
    """Aggregate ``[D, H, W]`` cost along a single scanline direction ``(dy, dx)``."""
    hwd = np.ascontiguousarray(np.transpose(cost, (1, 2, 0)), dtype=np.float64)
    out = _kernels.aggregate_path(hwd, float(p1), float(p2), *direction)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def aggregate_paths(cost: np.ndarray, cfg: SgmConfig = SgmConfig()) -> np.ndarray:
    """Sum of the path recursions over the configured directions."""
    hwd = np.ascontiguousarray(np.transpose(cost, (1, 2, 0)), dtype=np.float64)
    total = np.zeros_like(hwd)
    for dy, dx in cfg.paths:
        total += _kernels.aggregate_path(hwd, float(cfg.p1), float(cfg.p2), dy, dx)
    return np.ascontiguousarray(total.transpose(2, 0, 1))


def winner_take_all(aggregated: np.ndarray) -> np.ndarray:
    """Lowest-cost disparity per pixel; ties go to the smaller disparity."""
    return np.argmin(aggregated, axis=0)


def lr_consistent(disp_left: np.ndarray, disp_right: np.ndarray, tol: int) -> np.ndarray:
    """True where the left disparity lands in-frame on a right disparity within ``tol``."""
    h, w = disp_left.shape
    xr = np.arange(w)[None, :] - disp_left
    inside = xr >= 0
    back = disp_right[np.arange(h)[:, None], np.clip(xr, 0, w - 1)]
    return inside & (np.abs(disp_left - back) <= tol)


def wta_and_check(aggregated_left: np.ndarray, aggregated_right: np.ndarray, cfg: SgmConfig,
                  calib: Calibration) -> SgmResult:
    """Winner-take-all on both views, left-right check, conversion to depth.

    Zero disparity and depth beyond the encodable range are dropped as well.
    """
    d_left = winner_take_all(aggregated_left)
    d_right = winner_take_all(aggregated_right)
    keep = lr_consistent(d_left, d_right, cfg.lr_check_tol) & (d_left > 0)
    depth = np.zeros(d_left.shape, dtype=np.float32)
    depth[keep] = calib.focal_baseline / d_left[keep]
    keep &= depth <= MAX_DEPTH_M
    depth[~keep] = 0
    if not keep.any():
        raise ValueError("every pixel failed the left-right consistency check; "
                         "check image content and max_disp")
    return SgmResult(np.where(keep, d_left, -1), d_right, depth)


def run_sgm(left: np.ndarray, right: np.ndarray, calib: Calibration,
            cfg: SgmConfig = SgmConfig()) -> SgmResult:
    """Full pipeline on one rectified pair."""
    agg_left = aggregate_paths(matching_cost(left, right, cfg, "left"), cfg)
    agg_right = aggregate_paths(matching_cost(left, right, cfg, "right"), cfg)
    return wta_and_check(agg_left, agg_right, cfg, calib)


def reproject_to_right(depth_left: np.ndarray, calib: Calibration) -> np.ndarray:
    """Move left-view depth labels to the right view; nearer depth wins collisions."""
    h, w = depth_left.shape
    ys, xs = np.nonzero(depth_left > 0)
    depth = depth_left[ys, xs]
    xr = np.rint(xs - calib.focal_baseline / depth).astype(int)
    inside = xr >= 0
    ys, xr, depth = ys[inside], xr[inside], depth[inside]
    out = np.full((h, w), np.inf, dtype=np.float64)
    np.minimum.at(out, (ys, xr), depth)
    return np.where(np.isfinite(out), out, 0).astype(np.float32)


def generate_noise_labels(samples: Iterable[StereoSample], cfg: SgmConfig, out_dir: str | Path) -> NoiseReport:
    """Write ``<id>_noise.png`` per sample; failures are logged and the run continues."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = NoiseReport()
    for sample in samples:
        path = out_dir / f"{sample.sample_id}{NOISE_SUFFIX}"
        try:
            result = run_sgm(sample.left, sample.right, sample.calib, cfg)
            write_depth(path, result.depth)
        except (OSError, ValueError) as exc:
            log.warning("noise labels for %s failed: %s", sample.sample_id, exc)
            report.failed[sample.sample_id] = str(exc)
            continue
        report.written.append(path)
    return report
