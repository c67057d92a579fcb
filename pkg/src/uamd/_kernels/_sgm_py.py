"""Numpy versions of the compiled kernels, bit-identical in output."""

from __future__ import annotations

import numpy as np


def census_transform(img: np.ndarray, radius: int) -> np.ndarray:
    h, w = img.shape
    padded = np.pad(img, radius, mode="edge")
    code = np.zeros((h, w), dtype=np.uint64)
    bit = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            code |= (neighbor < img).astype(np.uint64) << np.uint64(bit)
            bit += 1
    return code


def census_cost(ref: np.ndarray, other: np.ndarray, n_disp: int, max_cost: float) -> np.ndarray:
    h, w = ref.shape
    out = np.full((h, w, n_disp), max_cost, dtype=np.float64)
    for d in range(min(n_disp, w)):
        out[:, d:, d] = np.bitwise_count(ref[:, d:] ^ other[:, :w - d])
    return out


def _step(prev: np.ndarray, cost: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """Recursion for a batch of pixels: ``prev`` and ``cost`` are [N, D]."""
    m = prev.min(axis=1, keepdims=True)
    v = prev.copy()
    np.minimum(v[:, 1:], prev[:, :-1] + p1, out=v[:, 1:])
    np.minimum(v[:, :-1], prev[:, 1:] + p1, out=v[:, :-1])
    np.minimum(v, m + p2, out=v)
    return cost + v - m


def aggregate_path(cost: np.ndarray, p1: float, p2: float, dy: int, dx: int) -> np.ndarray:
    h, w, _ = cost.shape
    L = np.empty_like(cost, dtype=np.float64)
    if dx != 0:
        # sweep columns; each row's predecessor sits dy rows away in the previous column
        xs = range(w) if dx > 0 else range(w - 1, -1, -1)
        first = True
        for x in xs:
            L[:, x] = cost[:, x]
            if first:
                first = False
                continue
            px = x - dx
            if dy == 0:
                L[:, x] = _step(L[:, px], cost[:, x], p1, p2)
            elif dy > 0:
                L[dy:, x] = _step(L[:-dy, px], cost[dy:, x], p1, p2)
            else:
                L[:dy, x] = _step(L[-dy:, px], cost[:dy, x], p1, p2)
    else:
        ys = range(h) if dy > 0 else range(h - 1, -1, -1)
        first = True
        for y in ys:
            if first:
                L[y] = cost[y]
                first = False
                continue
            L[y] = _step(L[y - dy], cost[y], p1, p2)
    return L
