"""Calibration flow: ground truth, Gaussian flow density, iterative updates,
uncertainty normalisation/gating and the sequence flow loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .camera import PinholeIntrinsics, PointCloud, project_points, rasterize_depth
from .geometry import SE3Transform


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel flow ``(fu, fv)`` with a scalar uncertainty channel ``q``.

    For raw fields ``q`` is a precision (larger is more confident). After
    :func:`normalize_uncertainty` the field is flagged ``normalized`` and
    ``q`` instead holds normalised uncertainty in ``[0, 1]`` (1 is worst).
    """

    fu: np.ndarray
    fv: np.ndarray
    q: np.ndarray
    valid: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        fu = np.asarray(self.fu, dtype=float)
        shape = fu.shape
        if len(shape) != 2:
            raise ValueError("flow channels must be 2-D grids")
        for name in ("fv", "q", "valid"):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"channel {name!r} has shape {np.shape(getattr(self, name))}, expected {shape}")
        object.__setattr__(self, "fu", fu)
        object.__setattr__(self, "fv", np.asarray(self.fv, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))

    @classmethod
    def zeros(cls, shape: tuple[int, int], q: float = 1.0) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape), np.full(shape, q), np.ones(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.fu.shape

    def flow(self) -> np.ndarray:
        return np.stack([self.fu, self.fv], axis=-1)


FlowSequence = Sequence[FlowField]


def _check_same_shape(a: FlowField, b: FlowField) -> None:
    if a.shape != b.shape:
        raise ValueError(f"flow shapes differ: {a.shape} vs {b.shape}")


def ground_truth_flow(cloud: PointCloud, T_init: SE3Transform, T_gt: SE3Transform,
                      K: PinholeIntrinsics) -> FlowField:
    """Flow anchored at the z-buffer winners of the ``T_init`` raster.

    Each valid pixel stores ``project(T_gt, P) - project(T_init, P)`` for its
    winning point ``P``, so the sub-pixel ``T_init`` projection plus the flow
    lands exactly on the ``T_gt`` projection.
    """
    depth = rasterize_depth(cloud, T_init, K)
    shape = depth.shape
    fu, fv = np.zeros(shape), np.zeros(shape)
    q = np.zeros(shape)
    valid = np.zeros(shape, dtype=bool)
    rows, cols = np.nonzero(depth.occupied)
    if rows.size:
        src = depth.source_index[rows, cols]
        uv_gt, _, front = project_points(T_gt, K, cloud.points[src])
        rows, cols, uv_gt = rows[front], cols[front], uv_gt[front]
        fu[rows, cols] = uv_gt[:, 0] - depth.u[rows, cols]
        fv[rows, cols] = uv_gt[:, 1] - depth.v[rows, cols]
        q[rows, cols] = 1.0
        valid[rows, cols] = True
    return FlowField(fu, fv, q, valid)


def gaussian_nll(dF, mu, sigma) -> float:
    """Negative log density of a flow increment under independent u/v Gaussians."""
    dF = np.asarray(dF, dtype=float).reshape(2)
    mu = np.asarray(mu, dtype=float).reshape(2)
    sigma = np.asarray(sigma, dtype=float).reshape(2)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma components must be positive")
    z = (dF - mu) / sigma
    return float(np.sum(0.5 * z * z + np.log(sigma)) + math.log(2.0 * math.pi))


def update_flow(prev: FlowField, delta: FlowField) -> FlowField:
    """One refinement step: add the increment, keep the increment's uncertainty."""
    _check_same_shape(prev, delta)
    return FlowField(prev.fu + delta.fu, prev.fv + delta.fv, delta.q.copy(),
                     prev.valid & delta.valid)


def flow_loss(seq: FlowSequence, gt: FlowField, gamma: float = 0.8) -> float:
    """Exponentially weighted sequence loss ``sum_i gamma^(N-i) mean(Q_i |e_i|_1 + 1/Q_i)``.

    Means run over pixels valid in both the prediction and the ground truth.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if len(seq) == 0:
        raise ValueError("empty flow sequence")
    n = len(seq)
    total = 0.0
    for i, f in enumerate(seq, start=1):
        _check_same_shape(f, gt)
        m = f.valid & gt.valid
        if not m.any():
            raise ValueError("no valid pixels for the flow loss")
        Q = f.q[m]
        err = np.abs(gt.fu[m] - f.fu[m]) + np.abs(gt.fv[m] - f.fv[m])
        total += gamma ** (n - i) * float(np.mean(Q * err + 1.0 / Q))
    return total


def normalize_uncertainty(f: FlowField) -> FlowField:
    """Per-frame min-max rescale of ``sigma = 1/q`` onto ``[0, 1]``, 1 = least confident.

    A constant field maps to zeros. Invalid pixels are set to 1. Already
    normalised fields are rescaled in place of sigma, which makes the
    operation idempotent.
    """
    if not f.valid.any():
        raise ValueError("no valid pixels to normalise")
    vals = f.q[f.valid] if f.normalized else 1.0 / f.q[f.valid]
    lo, hi = float(vals.min()), float(vals.max())
    out = np.ones(f.shape)
    if hi > lo:
        out[f.valid] = (vals - lo) / (hi - lo)
    else:
        out[f.valid] = 0.0
    return replace(f, q=out, normalized=True)


def select_high_quality(f: FlowField, threshold: float = 0.5) -> np.ndarray:
    """Mask of valid pixels whose normalised uncertainty is below ``threshold``."""
    if not f.normalized:
        raise ValueError("select_high_quality expects a normalised field")
    return f.valid & (f.q < threshold)
