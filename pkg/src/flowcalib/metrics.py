"""Extrinsic error metrics, flow error, summary statistics and the
uncertainty-vs-error regression.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .flow import FlowField
from .geometry import SE3Transform, euler_from_rotation

FIELDS = ("e_t", "e_x", "e_y", "e_z", "e_r", "e_roll", "e_pitch", "e_yaw")
HEADERS = ("E_t", "E_x", "E_y", "E_z", "E_r", "E_roll", "E_pitch", "E_yaw")

# Reference mean row for the (+-10 cm, +-5 deg) setting. Only a table layout
# fixture; it comes from a trained network that is not part of this package.
REFERENCE_MEAN_ROW = (1.425, 0.754, 0.476, 1.091, 0.084, 0.049, 0.046, 0.032)


@dataclass(frozen=True)
class CalibrationError:
    """Translation errors in centimetres, rotation errors in degrees (all unsigned)."""

    e_t: float
    e_x: float
    e_y: float
    e_z: float
    e_r: float
    e_roll: float
    e_pitch: float
    e_yaw: float

    def as_tuple(self) -> tuple:
        return astuple(self)


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    p_value: float


@dataclass(frozen=True)
class Summary:
    mean: CalibrationError
    median: CalibrationError
    std: CalibrationError
    count: int

    def table(self) -> str:
        return format_table([("Mean", self.mean), ("Median", self.median), ("Std", self.std)])


def calibration_error(T_pred: SE3Transform, T_gt: SE3Transform) -> CalibrationError:
    # delta = T_pred^-1 T_gt, written so equal inputs give an exactly zero translation
    R = T_pred.rotation
    dt = np.abs(R.T @ (T_gt.translation - T_pred.translation)) * 100.0
    e = euler_from_rotation(R.T @ T_gt.rotation)
    rot = np.degrees(np.abs([e.roll, e.pitch, e.yaw]))
    return CalibrationError(
        float(np.linalg.norm(dt)), float(dt[0]), float(dt[1]), float(dt[2]),
        float(np.linalg.norm(rot)), float(rot[0]), float(rot[1]), float(rot[2]),
    )


def flow_error(pred: FlowField, gt: FlowField) -> np.ndarray:
    """Per-pixel endpoint error; NaN where either field is invalid."""
    if pred.shape != gt.shape:
        raise ValueError(f"flow shapes differ: {pred.shape} vs {gt.shape}")
    err = np.hypot(pred.fu - gt.fu, pred.fv - gt.fv)
    return np.where(pred.valid & gt.valid, err, np.nan)


def _lower_median(x: np.ndarray) -> float:
    s = np.sort(x)
    return float(s[(len(s) - 1) // 2])


def aggregate(errors: Sequence[CalibrationError]) -> Summary:
    """Mean, lower median and population std per field."""
    if len(errors) == 0:
        raise ValueError("cannot aggregate an empty list")
    A = np.array([e.as_tuple() for e in errors], dtype=float)
    mean = CalibrationError(*(float(v) for v in A.mean(axis=0)))
    median = CalibrationError(*(_lower_median(A[:, k]) for k in range(A.shape[1])))
    std = CalibrationError(*(float(v) for v in A.std(axis=0)))
    return Summary(mean, median, std, len(errors))


def format_table(rows: Sequence[tuple[str, CalibrationError]], precision: int = 3) -> str:
    """Aligned text table, translation block (cm) then rotation block (deg)."""
    label_w = max([len(label) for label, _ in rows] + [6])
    col_w = max(10, precision + 7)
    head1 = " " * label_w + " " + "Translation(cm)".center(4 * col_w) + "Rotation(deg)".center(4 * col_w)
    head2 = " " * label_w + " " + "".join(h.rjust(col_w) for h in HEADERS)
    lines = [head1.rstrip(), head2]
    for label, err in rows:
        vals = "".join(f"{v:.{precision}f}".rjust(col_w) for v in err.as_tuple())
        lines.append(label.ljust(label_w) + " " + vals)
    return "\n".join(lines)


def csv_records(frames: Sequence[tuple[str, CalibrationError]]) -> str:
    lines = ["frame," + ",".join(f.name for f in fields(CalibrationError))]
    for frame_id, err in frames:
        lines.append(frame_id + "," + ",".join(repr(float(v)) for v in err.as_tuple()))
    return "\n".join(lines) + "\n"


def _t_two_sided_p(t: float, dof: int) -> float:
    if math.isinf(t):
        return 0.0
    # P(|T| > t) = I_{dof/(dof+t^2)}(dof/2, 1/2)
    return float(betainc(0.5 * dof, 0.5, dof / (dof + t * t)))


def uncertainty_regression(e_f, q_norm) -> RegressionResult:
    """OLS fit ``e_f ~ slope * q_norm + intercept`` with a two-sided slope p-value."""
    y = np.asarray(e_f, dtype=float).ravel()
    x = np.asarray(q_norm, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("e_f and q_norm must be paired")
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 paired samples")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise ValueError("regressor is constant")
    sxy = float(np.sum((x - xm) * (y - ym)))
    syy = float(np.sum((y - ym) ** 2))
    slope = sxy / sxx
    intercept = ym - slope * xm
    sse = max(syy - slope * sxy, 0.0)
    r2 = 1.0 if syy == 0 else min(max(1.0 - sse / syy, 0.0), 1.0)
    dof = n - 2
    se = math.sqrt(sse / dof / sxx)
    if se == 0:
        t = math.inf if slope != 0 else 0.0
        p = 0.0 if slope != 0 else 1.0
    else:
        t = slope / se
        p = _t_two_sided_p(abs(t), dof)
    return RegressionResult(float(slope), float(intercept), float(r2), p)
