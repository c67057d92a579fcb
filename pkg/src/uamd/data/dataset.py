"""On-disk dataset layout.

``<root>/<split>/<id>_left.png``, ``_right.png``, ``_sparse_left.png``,
``_sparse_right.png``, ``_gt.png`` and ``_calib.txt``.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .depth_io import (
    read_calibration,
    read_depth,
    read_image,
    write_calibration,
    write_depth,
    write_image,
)
from .sample import StereoSample

log = logging.getLogger(__name__)

COMPANIONS = {
    "left": "_left.png",
    "right": "_right.png",
    "sparse_left": "_sparse_left.png",
    "sparse_right": "_sparse_right.png",
    "gt": "_gt.png",
    "calib": "_calib.txt",
}
DISPARITY_SUFFIX = "_disp.png"
NOISE_SUFFIX = "_noise.png"


def sample_ids(split_dir: Path) -> list[str]:
    suffix, sparse = COMPANIONS["left"], COMPANIONS["sparse_left"]
    return sorted(p.name[: -len(suffix)] for p in split_dir.glob(f"*{suffix}") if not p.name.endswith(sparse))


def load_sample(split_dir: Path, sample_id: str) -> StereoSample:
    paths = {key: split_dir / f"{sample_id}{suffix}" for key, suffix in COMPANIONS.items()}
    missing = [key for key, p in paths.items() if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"sample {sample_id}: missing {', '.join(missing)}")
    return StereoSample(
        left=read_image(paths["left"]),
        right=read_image(paths["right"]),
        sparse_left=read_depth(paths["sparse_left"]),
        sparse_right=read_depth(paths["sparse_right"]),
        gt=read_depth(paths["gt"]),
        calib=read_calibration(paths["calib"]),
        sample_id=sample_id,
    )


def load_dataset(root_dir: str | Path, split: str) -> list[StereoSample]:
    """Load every complete sample of ``split`` in lexicographic id order.

    Incomplete samples are skipped with a warning; an empty result raises.
    """
    split_dir = Path(root_dir) / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"no such split directory: {split_dir}")
    samples = []
    for sid in sample_ids(split_dir):
        try:
            samples.append(load_sample(split_dir, sid))
        except FileNotFoundError as exc:
            log.warning("skipping %s", exc)
    if not samples:
        raise ValueError(f"no complete samples found in {split_dir}")
    return samples


def save_sample(sample: StereoSample, split_dir: str | Path, disparity: np.ndarray | None = None) -> list[Path]:
    """Write ``sample`` in the dataset layout; returns the files written."""
    split_dir = Path(split_dir)
    split_dir.mkdir(parents=True, exist_ok=True)
    base = split_dir / sample.sample_id
    written = []
    for key, suffix in COMPANIONS.items():
        path = Path(f"{base}{suffix}")
        if key in ("left", "right"):
            write_image(path, getattr(sample, key))
        elif key == "calib":
            write_calibration(path, sample.calib)
        else:
            write_depth(path, getattr(sample, key))
        written.append(path)
    if disparity is not None:
        # disparity sidecar uses the same 1/256 fixed-point PNG encoding
        path = Path(f"{base}{DISPARITY_SUFFIX}")
        write_depth(path, disparity)
        written.append(path)
    return written


def load_noise_labels(noise_dir: str | Path, samples: list[StereoSample]) -> dict[str, np.ndarray]:
    """Noise-label depth maps keyed by sample id; samples without a file are omitted."""
    noise_dir = Path(noise_dir)
    labels = {}
    for s in samples:
        path = noise_dir / f"{s.sample_id}{NOISE_SUFFIX}"
        if path.is_file():
            labels[s.sample_id] = read_depth(path)
        else:
            log.warning("no noise label for sample %s", s.sample_id)
    return labels
