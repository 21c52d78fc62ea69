"""All-pairs correlation volume, its average-pooled pyramid and windowed lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUM_LEVELS = 4


@dataclass(frozen=True, eq=False)
class CorrelationPyramid:
    levels: list

    def __len__(self) -> int:
        return len(self.levels)


def _check_feature_map(f: np.ndarray, name: str) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim != 3 or f.shape[2] < 1:
        raise ValueError(f"{name} must have shape (H, W, D) with D >= 1, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{name} has non-finite entries")
    return f


def build_correlation_volume(a, b) -> np.ndarray:
    """``C[i, j, k, h] = <a[i, j], b[k, h]>``; every spatial size must be divisible by 8."""
    a = _check_feature_map(a, "a")
    b = _check_feature_map(b, "b")
    if a.shape[2] != b.shape[2]:
        raise ValueError(f"feature dimensions differ: {a.shape[2]} vs {b.shape[2]}")
    for n in a.shape[:2] + b.shape[:2]:
        if n % 8:
            raise ValueError(f"spatial sizes must be divisible by 8, got {a.shape[:2]} and {b.shape[:2]}")
    return np.einsum("ijd,khd->ijkh", a, b)


def _pool2x2(c: np.ndarray) -> np.ndarray:
    H, W, h, w = c.shape
    return c.reshape(H, W, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def build_pyramid(c) -> CorrelationPyramid:
    c = np.asarray(c, dtype=float)
    if c.ndim != 4:
        raise ValueError("correlation volume must be 4-D")
    if c.shape[2] % 8 or c.shape[3] % 8:
        raise ValueError(f"last two dimensions must be divisible by 8, got {c.shape[2:]}")
    levels = [c]
    for _ in range(NUM_LEVELS - 1):
        levels.append(_pool2x2(levels[-1]))
    return CorrelationPyramid(levels)


def _bilinear(vol: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``vol[i, j]`` (an ``(h, w)`` map per source pixel) at ``(x, y)``, zero outside.

    ``x``/``y`` have shape ``(H, W, S)``; returns ``(H, W, S)``.
    """
    H, W, h, w = vol.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    ax = x - x0
    ay = y - y0
    ii = np.arange(H)[:, None, None]
    jj = np.arange(W)[None, :, None]
    out = np.zeros(x.shape)
    for dy, wy in ((0, 1.0 - ay), (1, ay)):
        for dx, wx in ((0, 1.0 - ax), (1, ax)):
            xs, ys = x0 + dx, y0 + dy
            inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            vals = vol[ii, jj, np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)]
            out += np.where(inside, wx * wy * vals, 0.0)
    return out


def lookup(p: CorrelationPyramid, coords, radius: int) -> np.ndarray:
    """Gather a ``(2r+1)^2`` window per level around ``coords`` (``(H, W, 2)`` as x, y).

    Coordinates are scaled by ``1/2^(k-1)`` at level ``k``. Window offsets run
    row-major (dy outer, dx inner); levels are concatenated, giving
    ``4 * (2r+1)^2`` channels.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    coords = np.asarray(coords, dtype=float)
    H, W = p.levels[0].shape[:2]
    if coords.shape != (H, W, 2):
        raise ValueError(f"coords must have shape {(H, W, 2)}, got {coords.shape}")
    offs = np.arange(-radius, radius + 1, dtype=float)
    dy, dx = np.meshgrid(offs, offs, indexing="ij")
    dx, dy = dx.ravel(), dy.ravel()
    out = []
    for k, vol in enumerate(p.levels):
        scale = 2.0 ** k
        x = coords[..., 0:1] / scale + dx
        y = coords[..., 1:2] / scale + dy
        out.append(_bilinear(vol, x, y))
    return np.concatenate(out, axis=-1)
