"""Pinhole projection and inverse-depth rasterization with a z-buffer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import SE3Transform

Z_MIN = 1e-6
NO_SOURCE = -1


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("image size must be integral")
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8 pixels")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def default_intrinsics() -> PinholeIntrinsics:
    """KITTI left colour camera at half resolution."""
    return PinholeIntrinsics(359.428, 359.428, 303.596, 92.5937, 621, 188)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(P)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", P)
        if self.intensity is not None:
            I = np.asarray(self.intensity, dtype=float).reshape(-1)
            if I.shape[0] != P.shape[0]:
                raise ValueError("intensity length does not match point count")
            object.__setattr__(self, "intensity", I)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Z-buffered inverse depth plus the winning point per pixel.

    ``u``/``v`` hold the continuous projection of the winning point so that
    downstream consumers can anchor flow at the exact sub-pixel location.
    Empty pixels carry ``inv_depth == 0``, ``source_index == -1`` and NaN
    coordinates.
    """

    inv_depth: np.ndarray
    source_index: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.inv_depth.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.source_index != NO_SOURCE


def project_points(T: SE3Transform, K: PinholeIntrinsics, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection. Returns ``uv (N,2)``, ``inv_depth (N,)`` and a front-of-camera mask.

    Entries behind the camera are NaN.
    """
    Xc = T.apply(np.asarray(points, dtype=float).reshape(-1, 3))
    front = Xc[:, 2] > Z_MIN
    z = np.where(front, Xc[:, 2], np.nan)
    uv = np.stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=1)
    return uv, 1.0 / z, front


def project_point(T: SE3Transform, K: PinholeIntrinsics, P) -> Optional[tuple[float, float, float]]:
    """Project one LiDAR point to ``(u, v, inverse depth)``; ``None`` if behind the camera."""
    uv, d, front = project_points(T, K, np.asarray(P, dtype=float).reshape(1, 3))
    if not front[0]:
        return None
    return (float(uv[0, 0]), float(uv[0, 1]), float(d[0]))


def projection_jacobian(K: PinholeIntrinsics, Xc) -> np.ndarray:
    """d(u, v)/d(camera-frame point), shape ``(N, 2, 3)``."""
    Xc = np.asarray(Xc, dtype=float).reshape(-1, 3)
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    J = np.zeros((Xc.shape[0], 2, 3))
    J[:, 0, 0] = K.fx / z
    J[:, 0, 2] = -K.fx * x / z**2
    J[:, 1, 1] = K.fy / z
    J[:, 1, 2] = -K.fy * y / z**2
    return J


def in_scope(u, v, K: PinholeIntrinsics):
    """Inside ``[0, width) x [0, height)``; NaN (behind camera) and ``None`` are out."""
    if u is None or v is None:
        return False
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ok = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return bool(ok) if ok.ndim == 0 else ok


def rasterize_depth(cloud: PointCloud, T: SE3Transform, K: PinholeIntrinsics) -> DepthImage:
    """Nearest point wins each pixel (largest inverse depth, then lowest index)."""
    H, W = K.height, K.width
    inv_depth = np.zeros((H, W))
    source = np.full((H, W), NO_SOURCE, dtype=np.int64)
    u_img = np.full((H, W), np.nan)
    v_img = np.full((H, W), np.nan)
    if len(cloud) == 0:
        return DepthImage(inv_depth, source, u_img, v_img)

    uv, d, front = project_points(T, K, cloud.points)
    keep = front & in_scope(np.nan_to_num(uv[:, 0], nan=-1.0), np.nan_to_num(uv[:, 1], nan=-1.0), K)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return DepthImage(inv_depth, source, u_img, v_img)
    cols = np.floor(uv[idx, 0]).astype(np.int64)
    rows = np.floor(uv[idx, 1]).astype(np.int64)
    flat = rows * W + cols
    # primary key pixel, then descending inverse depth, then ascending index
    order = np.lexsort((idx, -d[idx], flat))
    flat_sorted = flat[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = idx[order[first]]
    pix = flat_sorted[first]
    r, c = np.divmod(pix, W)
    inv_depth[r, c] = d[win]
    source[r, c] = win
    u_img[r, c] = uv[win, 0]
    v_img[r, c] = uv[win, 1]
    return DepthImage(inv_depth, source, u_img, v_img)
