"""KITTI-convention depth PNGs and 8-bit RGB image I/O.

Depth is stored as 16-bit grayscale with ``value / 256`` meters per unit and
0 reserved for invalid pixels.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

DEPTH_SCALE = 256.0
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _png_header(data: bytes) -> tuple[int, int]:
    """Bit depth and color type from the IHDR chunk."""
    if len(data) < 33 or data[:8] != _PNG_MAGIC or data[12:16] != b"IHDR":
        raise ValueError("not a PNG stream")
    return data[24], data[25]


def decode_depth_png(data: bytes) -> np.ndarray:
    """Decode a 16-bit single-channel depth PNG to meters (float32, 0 = invalid)."""
    bit_depth, color_type = _png_header(data)
    if bit_depth != 16 or color_type != 0:
        raise ValueError(f"depth PNG must be 16-bit grayscale, got bit depth {bit_depth}, "
                         f"color type {color_type}")
    with Image.open(io.BytesIO(data)) as img:
        raw = np.array(img, dtype=np.uint16)
    return (raw.astype(np.float64) / DEPTH_SCALE).astype(np.float32)


def encode_depth_png(depth: np.ndarray) -> bytes:
    """Encode meters as a 16-bit PNG, rounding to the nearest 1/256 m.

    Non-positive or non-finite entries are written as invalid (0).
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth map must be 2D, got shape {depth.shape}")
    valid = np.isfinite(depth) & (depth > 0)
    if np.any(depth[valid] >= 65536 / DEPTH_SCALE):
        raise ValueError("depth must be below 256 m to fit the 16-bit encoding")
    stored = np.zeros(depth.shape, dtype=np.uint16)
    stored[valid] = np.clip(np.rint(depth[valid] * DEPTH_SCALE), 1, 65535).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


def read_depth(path: str | Path) -> np.ndarray:
    return decode_depth_png(Path(path).read_bytes())


def write_depth(path: str | Path, depth: np.ndarray) -> None:
    Path(path).write_bytes(encode_depth_png(depth))


def read_image(path: str | Path) -> np.ndarray:
    """8-bit RGB PNG as a ``[3, H, W]`` float32 array in [0, 1]."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ValueError(f"{path}: expected an RGB image, got mode {img.mode}")
        arr = np.array(img, dtype=np.uint8)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def write_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def read_calibration(path: str | Path):
    from .sample import Calibration

    values = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if len(parts) == 2:
            values[parts[0]] = float(parts[1])
    try:
        return Calibration(values["focal_px"], values["baseline_m"])
    except KeyError as exc:
        raise ValueError(f"{path}: missing calibration key {exc}") from None


def write_calibration(path: str | Path, calib) -> None:
    Path(path).write_text(f"focal_px {calib.focal_length_px!r}\nbaseline_m {calib.baseline_m!r}\n")
