"""Readers and writers: KITTI velodyne scans, intrinsics, extrinsics and flow fields.

Every failure surfaces as a :class:`DataError` subclass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .camera import PinholeIntrinsics, PointCloud
from .flow import FlowField
from .geometry import SE3Transform, nearest_rotation

FLOW_MAGIC = b"DXQF"
FLOW_VERSION = 1
_FLOW_HEADER = struct.Struct("<4sIII")
# rotations further than this from orthonormal are rejected, closer ones projected
MAX_ROTATION_DEFECT = 1e-3


class DataError(ValueError):
    """Base class for unreadable or malformed input data."""


class UnreadableFileError(DataError):
    pass


class MalformedFileError(DataError):
    pass


class SizeError(MalformedFileError):
    pass


class NonOrthonormalError(MalformedFileError):
    pass


class BadMagicError(MalformedFileError):
    pass


class BadVersionError(MalformedFileError):
    pass


class TruncatedPayloadError(MalformedFileError):
    pass


@dataclass(frozen=True, eq=False)
class DatasetFrame:
    cloud: PointCloud
    intrinsics: PinholeIntrinsics
    extrinsic_gt: Optional[SE3Transform]
    frame_id: str

    def __post_init__(self):
        if not self.frame_id:
            raise ValueError("frame_id must be non-empty")
        if len(self.cloud) == 0:
            raise ValueError("frame cloud is empty")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_text(path) -> str:
    raw = _read_bytes(path)
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFileError(f"{path} is not UTF-8 text") from exc


def _numbers(text: str, path) -> list[float]:
    vals = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        for tok in line.split():
            try:
                vals.append(float(tok))
            except ValueError as exc:
                raise MalformedFileError(f"{path}: not a number: {tok!r}") from exc
    if not all(np.isfinite(vals)):
        raise MalformedFileError(f"{path}: non-finite value")
    return vals


def read_point_cloud(path) -> PointCloud:
    """KITTI velodyne ``.bin``: little-endian float32 ``(x, y, z, reflectance)`` records."""
    raw = _read_bytes(path)
    if len(raw) % 16:
        raise SizeError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(float)
    if not np.all(np.isfinite(data)):
        raise MalformedFileError(f"{path}: non-finite coordinates")
    return PointCloud(data[:, :3], data[:, 3])


def write_point_cloud(cloud: PointCloud, path) -> None:
    n = len(cloud)
    rec = np.zeros((n, 4), dtype="<f4")
    rec[:, :3] = cloud.points
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity
    Path(path).write_bytes(rec.tobytes())


def read_intrinsics(path) -> PinholeIntrinsics:
    vals = _numbers(_read_text(path), path)
    if len(vals) != 6:
        raise MalformedFileError(f"{path}: expected 6 numbers (fx fy cx cy width height), got {len(vals)}")
    fx, fy, cx, cy, w, h = vals
    try:
        return PinholeIntrinsics(fx, fy, cx, cy, w, h)
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc


def write_intrinsics(K: PinholeIntrinsics, path) -> None:
    Path(path).write_text(f"{K.fx:.17g} {K.fy:.17g} {K.cx:.17g} {K.cy:.17g} {K.width} {K.height}\n")


def read_extrinsic(path) -> SE3Transform:
    """Row-major 3x4 ``[R | t]``; slightly non-orthonormal rotations are projected."""
    vals = _numbers(_read_text(path), path)
    if len(vals) != 12:
        raise MalformedFileError(f"{path}: expected 12 numbers, got {len(vals)}")
    M = np.array(vals).reshape(3, 4)
    R = M[:, :3]
    defect = np.linalg.norm(R.T @ R - np.eye(3))
    if defect > MAX_ROTATION_DEFECT or np.linalg.det(R) <= 0:
        raise NonOrthonormalError(f"{path}: rotation is not orthonormal (defect {defect:.3g})")
    try:
        return SE3Transform(R, M[:, 3])
    except ValueError:
        return SE3Transform(nearest_rotation(R), M[:, 3])


def format_extrinsic(T: SE3Transform) -> str:
    M = np.column_stack([T.rotation, T.translation])
    return " ".join(f"{v:.17g}" for v in M.ravel()) + "\n"


def write_extrinsic(T: SE3Transform, path) -> None:
    Path(path).write_text(format_extrinsic(T))


def write_flow(f: FlowField, path) -> None:
    H, W = f.shape
    rec = np.zeros((H, W, 4), dtype="<f4")
    v = f.valid
    rec[..., 0] = np.where(v, f.fu, 0.0)
    rec[..., 1] = np.where(v, f.fv, 0.0)
    rec[..., 2] = np.where(v, f.q, 0.0)
    rec[..., 3] = v
    Path(path).write_bytes(_FLOW_HEADER.pack(FLOW_MAGIC, FLOW_VERSION, W, H) + rec.tobytes())


def read_flow(path) -> FlowField:
    raw = _read_bytes(path)
    if len(raw) < _FLOW_HEADER.size:
        if raw[:4] != FLOW_MAGIC[: len(raw[:4])]:
            raise BadMagicError(f"{path}: bad magic")
        raise TruncatedPayloadError(f"{path}: header truncated")
    magic, version, W, H = _FLOW_HEADER.unpack_from(raw)
    if magic != FLOW_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FLOW_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    need = _FLOW_HEADER.size + H * W * 16
    if len(raw) < need:
        raise TruncatedPayloadError(f"{path}: payload has {len(raw) - _FLOW_HEADER.size} of {H * W * 16} bytes")
    if len(raw) > need:
        raise MalformedFileError(f"{path}: {len(raw) - need} trailing bytes")
    rec = np.frombuffer(raw, dtype="<f4", offset=_FLOW_HEADER.size).reshape(H, W, 4).astype(float)
    valid_raw = rec[..., 3]
    if not np.all((valid_raw == 0) | (valid_raw == 1)):
        raise MalformedFileError(f"{path}: validity channel must be 0 or 1")
    return FlowField(rec[..., 0], rec[..., 1], rec[..., 2], valid_raw == 1)


def read_frame(velodyne_path, intrinsics_path, extrinsic_path=None, frame_id: Optional[str] = None) -> DatasetFrame:
    cloud = read_point_cloud(velodyne_path)
    K = read_intrinsics(intrinsics_path)
    T = read_extrinsic(extrinsic_path) if extrinsic_path is not None else None
    try:
        return DatasetFrame(cloud, K, T, frame_id or Path(velodyne_path).stem)
    except ValueError as exc:
        raise MalformedFileError(str(exc)) from exc
