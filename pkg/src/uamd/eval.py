"""Depth metrics, sensor-failure simulation and fallback-combo evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data.sample import StereoSample
from .network import ModalCombo, ModelParams, NetworkConfig, forward

REPORT_COLUMNS = ("combo", "failure", "rmse_mm", "mae_mm", "irmse_per_km", "imae_per_km", "n_valid")
DEFAULT_ROTATION_DEG = 5.0


@dataclass(frozen=True)
class MetricsReport:
    rmse_mm: float
    mae_mm: float
    irmse_per_km: float
    imae_per_km: float
    n_valid: int

    def as_row(self) -> list:
        return [repr(self.rmse_mm), repr(self.mae_mm), repr(self.irmse_per_km), repr(self.imae_per_km),
                self.n_valid]


def compute_metrics(pred: np.ndarray, gt: np.ndarray) -> MetricsReport:
    """RMSE/MAE of depth in mm and iRMSE/iMAE of inverse depth in 1/km over pixels with gt > 0."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    valid = gt > 0
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise ValueError("ground truth has no valid pixels")
    p, g = pred[valid], gt[valid]
    err = (p - g) * 1000.0
    with np.errstate(divide="ignore"):
        ierr = 1000.0 / p - 1000.0 / g
    mae, imae = float(np.mean(np.abs(err))), float(np.mean(np.abs(ierr)))
    # the root mean square never falls below the mean; clamp away rounding when all errors are equal
    rmse = max(float(np.sqrt(np.mean(np.square(err)))), mae)
    irmse = max(float(np.sqrt(np.mean(np.square(ierr)))), imae)
    return MetricsReport(rmse, mae, irmse, imae, n)


_FAILURE_NAMES = {
    "half_h": "ImageHalfH",
    "half_v": "ImageHalfV",
    "full": "ImageFull",
    "rotation": "Rotation",
    "lidar": "LidarDropout",
}
IMAGE_FAILURES = ("half_h", "half_v", "full")


@dataclass(frozen=True)
class FailureKind:
    """A simulated sensor failure; ``angle_deg`` only matters for rotation."""

    kind: str
    angle_deg: float = DEFAULT_ROTATION_DEG

    def __post_init__(self):
        if self.kind not in _FAILURE_NAMES:
            raise ValueError(f"unknown failure {self.kind!r}; expected one of {', '.join(_FAILURE_NAMES)}")
        if not math.isfinite(self.angle_deg):
            raise ValueError("rotation angle must be finite")

    @classmethod
    def parse(cls, text: str, angle_deg: float = DEFAULT_ROTATION_DEG) -> "FailureKind":
        return cls(text.strip().lower(), angle_deg)

    @property
    def name(self) -> str:
        if self.kind == "rotation":
            return f"Rotation({self.angle_deg:g})"
        return _FAILURE_NAMES[self.kind]

    @property
    def is_image_failure(self) -> bool:
        return self.kind in IMAGE_FAILURES


ImageHalfH = FailureKind("half_h")
ImageHalfV = FailureKind("half_v")
ImageFull = FailureKind("full")
LidarDropout = FailureKind("lidar")


def Rotation(angle_deg: float = DEFAULT_ROTATION_DEG) -> FailureKind:  # noqa: N802
    return FailureKind("rotation", angle_deg)


def rotate_sparse(depth: np.ndarray, angle_deg: float) -> np.ndarray:
    """Move each valid pixel by an in-plane rotation about the image center.

    Targets are rounded to the nearest pixel; collisions keep the nearer depth
    and pixels leaving the frame are dropped.
    """
    h, w = depth.shape
    ys, xs = np.nonzero(depth > 0)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = xs - cx, ys - cy
    nx = np.rint(cx + c * dx - s * dy).astype(int)
    ny = np.rint(cy + s * dx + c * dy).astype(int)
    inside = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    out = np.full((h, w), np.inf)
    np.minimum.at(out, (ny[inside], nx[inside]), depth[ys[inside], xs[inside]])
    return np.where(np.isfinite(out), out, 0).astype(depth.dtype)


def apply_failure(sample: StereoSample, kind: FailureKind) -> StereoSample:
    """Copy of ``sample`` with the failure applied; image failures hit the right image."""
    if kind.is_image_failure:
        right = sample.right.copy()
        h, w = sample.height, sample.width
        if kind.kind == "half_h":
            right[:, :, w // 2:] = 0
        elif kind.kind == "half_v":
            right[:, h // 2:, :] = 0
        else:
            right[:] = 0
        return sample.replace(right=right)
    if kind.kind == "lidar":
        return sample.replace(sparse_left=np.zeros_like(sample.sparse_left),
                              sparse_right=np.zeros_like(sample.sparse_right))
    return sample.replace(sparse_left=rotate_sparse(sample.sparse_left, kind.angle_deg),
                          sparse_right=rotate_sparse(sample.sparse_right, kind.angle_deg))


def fallback_combo(kind: FailureKind) -> ModalCombo:
    """Image failures fall back to mono+LiDAR; LiDAR failures fall back to stereo only."""
    return ModalCombo.MONO_LIDAR if kind.is_image_failure else ModalCombo.DUAL


def predict_depth(params: ModelParams, sample: StereoSample, combo: ModalCombo, net: NetworkConfig) -> np.ndarray:
    return forward(sample, combo, params, net, side="left").depth.values


def evaluate(params: ModelParams, dataset: Sequence[StereoSample], net: NetworkConfig,
             combo: ModalCombo | str | None = None, failure: FailureKind | None = None) -> MetricsReport:
    """Metrics over the union of gt-valid pixels of every sample.

    Without ``combo`` the failure's fallback combo is used.
    """
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    if combo is None:
        if failure is None:
            raise ValueError("need a combo or a failure to choose one")
        combo = fallback_combo(failure)
    combo = ModalCombo.parse(combo)
    preds, gts = [], []
    for sample in dataset:
        if failure is not None:
            sample = apply_failure(sample, failure)
        depth = predict_depth(params, sample, combo, net)
        valid = sample.gt > 0
        preds.append(depth[valid])
        gts.append(sample.gt[valid])
    return compute_metrics(np.concatenate(preds), np.concatenate(gts))


def write_report(path: str | Path, rows: Iterable[tuple[ModalCombo | str, FailureKind | None, MetricsReport]]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_COLUMNS)
        for combo, failure, report in rows:
            combo = ModalCombo.parse(combo).key
            writer.writerow([combo, "none" if failure is None else failure.name, *report.as_row()])


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        for key in REPORT_COLUMNS[2:6]:
            row[key] = float(row[key])
        row["n_valid"] = int(row["n_valid"])
    return rows

