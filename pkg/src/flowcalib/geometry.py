"""SE(3) arithmetic, Euler-angle conversion and extrinsic perturbation sampling.

Twists are ordered ``(rho, phi)``: translational part first, rotational part
second. Euler angles follow the extrinsic ZYX convention, ``R = Rz(yaw) @
Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

# Below this rotation angle exp/log switch to Taylor expansions.
SMALL_ANGLE = 1e-8
# Jacobian coefficients lose precision much earlier than exp/log.
JACOBIAN_SERIES_ANGLE = 1e-2
LOG_PI_MARGIN = 1e-6
GIMBAL_LOCK_EPS = 1e-9
ORTHONORMAL_TOL = 1e-9


class AngleNearPiError(ValueError):
    """Rotation angle is too close to pi for a unique logarithm."""


class GimbalLockError(ValueError):
    """Pitch is at +-90 degrees; roll and yaw are not separable."""


def make_rng(seed: int | np.random.Generator | None = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; passes existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]], dtype=float)


def _frozen(a, shape) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SE3Transform:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.linalg.norm(R.T @ R - np.eye(3)) >= ORTHONORMAL_TOL or np.linalg.det(R) <= 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "SE3Transform":
        M = np.asarray(M, dtype=float)
        if M.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"expected a 4x4 or 3x4 matrix, got {M.shape}")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "SE3Transform":
        return cls(np.eye(3), t)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "SE3Transform":
        Rt = self.rotation.T
        return SE3Transform(Rt, -Rt @ self.translation)

    def compose(self, other: "SE3Transform") -> "SE3Transform":
        return SE3Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector)."""
        P = np.asarray(points, dtype=float)
        R = self.rotation
        # explicit per-row sums keep results independent of batch size
        return P[..., 0:1] * R[:, 0] + P[..., 1:2] * R[:, 1] + P[..., 2:3] * R[:, 2] + self.translation

    def allclose(self, other: "SE3Transform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"SE3Transform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _frozen(self.rho, (3,)))
        object.__setattr__(self, "phi", _frozen(self.phi, (3,)))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])


TwistLike = Union[Twist, np.ndarray, list, tuple]


def _as_vector(xi: TwistLike) -> np.ndarray:
    if isinstance(xi, Twist):
        return xi.vector()
    return np.asarray(xi, dtype=float).reshape(6)


@dataclass(frozen=True)
class EulerAngles:
    roll: float
    pitch: float
    yaw: float

    def vector(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass(frozen=True)
class PerturbRange:
    """Half-widths of the perturbation box: metres per axis, radians per Euler axis.

    Zero widths are accepted and yield the identity perturbation.
    """

    max_translation: float
    max_rotation: float

    def __post_init__(self):
        if not (self.max_translation >= 0 and self.max_rotation >= 0):
            raise ValueError("perturbation ranges must be non-negative")

    @classmethod
    def from_degrees(cls, max_translation: float, max_rotation_deg: float) -> "PerturbRange":
        return cls(max_translation, math.radians(max_rotation_deg))


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    W = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W @ W
    a = math.sin(theta) / theta
    b = 2.0 * math.sin(0.5 * theta) ** 2 / theta**2
    return np.eye(3) + a * W + b * W @ W


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if theta >= math.pi - LOG_PI_MARGIN:
        raise AngleNearPiError(f"rotation angle {theta:.9f} too close to pi")
    if theta < SMALL_ANGLE:
        return w * (1.0 + theta**2 / 6.0)
    return w * (theta / s)


def _left_jacobian_so3(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    W = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    b = 2.0 * math.sin(0.5 * theta) ** 2 / theta**2
    c = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + b * W + c * W @ W


def se3_exp(xi: TwistLike) -> SE3Transform:
    """Exponential map from a twist ``(rho, phi)`` to a rigid transform."""
    v = _as_vector(xi)
    rho, phi = v[:3], v[3:]
    return SE3Transform(so3_exp(phi), _left_jacobian_so3(phi) @ rho)


def se3_log(T: SE3Transform) -> Twist:
    """Logarithm map; raises :class:`AngleNearPiError` near a half turn."""
    phi = so3_log(T.rotation)
    theta = float(np.linalg.norm(phi))
    W = skew(phi)
    if theta < SMALL_ANGLE:
        coef = 1.0 / 12.0
    else:
        half = 0.5 * theta
        coef = (1.0 - half / math.tan(half)) / theta**2
    V_inv = np.eye(3) - 0.5 * W + coef * W @ W
    return Twist(V_inv @ T.translation, phi)


def _series(theta: float, exact, taylor):
    return taylor(theta * theta) if theta < JACOBIAN_SERIES_ANGLE else exact(theta)


def se3_left_jacobian(xi: TwistLike) -> np.ndarray:
    """6x6 left Jacobian: ``exp(xi + d) ~= exp(J_l d) exp(xi)`` to first order."""
    v = _as_vector(xi)
    rho, phi = v[:3], v[3:]
    theta = float(np.linalg.norm(phi))
    P, Rh = skew(phi), skew(rho)
    c1 = _series(theta, lambda t: (t - math.sin(t)) / t**3,
                 lambda t2: 1 / 6 - t2 / 120 + t2 * t2 / 5040)
    c2 = _series(theta, lambda t: (t * t + 2 * math.cos(t) - 2) / (2 * t**4),
                 lambda t2: 1 / 24 - t2 / 720 + t2 * t2 / 40320)
    c3 = _series(theta, lambda t: (2 * t - 3 * math.sin(t) + t * math.cos(t)) / (2 * t**5),
                 lambda t2: 1 / 120 - t2 / 2520 + t2 * t2 / 120960)
    Q = (0.5 * Rh
         + c1 * (P @ Rh + Rh @ P + P @ Rh @ P)
         + c2 * (P @ P @ Rh + Rh @ P @ P - 3 * P @ Rh @ P)
         + c3 * (P @ Rh @ P @ P + P @ P @ Rh @ P))
    J = _left_jacobian_so3(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[:3, 3:] = Q
    return out


def se3_right_jacobian(xi: TwistLike) -> np.ndarray:
    """6x6 right Jacobian: ``exp(xi + d) ~= exp(xi) exp(J_r d)``."""
    return se3_left_jacobian(-_as_vector(xi))


def se3_compose(A: SE3Transform, B: SE3Transform) -> SE3Transform:
    return A.compose(B)


def se3_inverse(T: SE3Transform) -> SE3Transform:
    return T.inverse()


def rotation_from_euler(e: EulerAngles) -> np.ndarray:
    cr, sr = math.cos(e.roll), math.sin(e.roll)
    cp, sp = math.cos(e.pitch), math.sin(e.pitch)
    cy, sy = math.cos(e.yaw), math.sin(e.yaw)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return Rz @ Ry @ Rx


def euler_from_rotation(R: np.ndarray) -> EulerAngles:
    """ZYX extraction; pitch uses the ``hypot(r32, r33)`` denominator."""
    R = np.asarray(R, dtype=float)
    if abs(R[2, 0]) > 1.0 - GIMBAL_LOCK_EPS:
        raise GimbalLockError(f"|r31| = {abs(R[2, 0]):.12f}")
    roll = math.atan2(R[2, 1], R[2, 2])
    pitch = math.atan2(-R[2, 0], math.hypot(R[2, 1], R[2, 2]))
    yaw = math.atan2(R[1, 0], R[0, 0])
    return EulerAngles(roll, pitch, yaw)


def sample_perturbation(rng_range: PerturbRange, seed: int | np.random.Generator = 0) -> SE3Transform:
    """Draw a perturbation uniformly from the translation/Euler box."""
    rng = make_rng(seed)
    dt = rng.uniform(-rng_range.max_translation, rng_range.max_translation, size=3)
    dr = rng.uniform(-rng_range.max_rotation, rng_range.max_rotation, size=3)
    return SE3Transform(rotation_from_euler(EulerAngles(*dr)), dt)


def make_initial_extrinsic(T_gt: SE3Transform, dT: SE3Transform) -> SE3Transform:
    return T_gt.compose(dT.inverse())


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest proper rotation in Frobenius norm (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def kitti_like_extrinsic() -> SE3Transform:
    """LiDAR (x fwd, y left, z up) to camera (x right, y down, z fwd), small lever arm."""
    R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return SE3Transform(R, np.array([0.0, -0.08, -0.27]))
