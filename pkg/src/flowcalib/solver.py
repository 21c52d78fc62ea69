"""Uncertainty-weighted Gauss-Newton extrinsic refinement from flow correspondences.

The estimate is ``T_init @ dT`` with ``dT`` refined by right-multiplied twist
increments, ``dT <- dT @ exp(delta)``. The residual of correspondence ``i`` is
``target_i - project(K, T_init @ dT @ P_i)`` in pixels.

Also here: implicit differentiation of the solution with respect to the
targets, and the geodesic / total training losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import DepthImage, PinholeIntrinsics, PointCloud, Z_MIN, in_scope, projection_jacobian
from .flow import FlowField
from .geometry import SE3Transform, se3_exp, se3_log, se3_right_jacobian, skew

MIN_CORRESPONDENCES = 3
# Damped normal matrices with a smaller eigenvalue ratio are treated as rank deficient.
SINGULAR_RCOND = 1e-12


class SolverError(RuntimeError):
    pass


class InsufficientCorrespondencesError(SolverError):
    pass


class SingularSystemError(SolverError):
    pass


class NotConvergedError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """2D-3D pairs: LiDAR ``points`` (M, 3), pixel ``targets`` (M, 2), ``weights`` (M,).

    ``source_pixels`` are the integer ``(u, v)`` raster cells the pairs came
    from; ``anchors`` the sub-pixel ``T_init`` projections inside them.
    """

    points: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    source_pixels: np.ndarray
    anchors: np.ndarray = field(default=None)

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float).reshape(-1, 3)
        m = P.shape[0]
        tgt = np.asarray(self.targets, dtype=float).reshape(m, 2)
        w = np.asarray(self.weights, dtype=float).reshape(m)
        px = np.asarray(self.source_pixels, dtype=np.int64).reshape(m, 2)
        anchors = px + 0.5 if self.anchors is None else self.anchors
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "targets", tgt)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "source_pixels", px)
        object.__setattr__(self, "anchors", np.asarray(anchors, dtype=float).reshape(m, 2))
        if np.any(w < 0) or not np.all(np.isfinite(tgt)):
            raise ValueError("weights must be non-negative and targets finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_arrays(cls, points, targets, weights=None) -> "CorrespondenceSet":
        targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        m = targets.shape[0]
        w = np.ones(m) if weights is None else weights
        return cls(points, targets, w, np.floor(targets).astype(np.int64), targets.copy())

    def with_weights(self, weights) -> "CorrespondenceSet":
        return CorrespondenceSet(self.points, self.targets, weights, self.source_pixels, self.anchors)

    def with_targets(self, targets) -> "CorrespondenceSet":
        return CorrespondenceSet(self.points, targets, self.weights, self.source_pixels, self.anchors)

    def sample(self, grid: np.ndarray) -> np.ndarray:
        """Read a per-pixel grid at each correspondence's source pixel."""
        return np.asarray(grid)[self.source_pixels[:, 1], self.source_pixels[:, 0]]


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    convergence_tol: float = 1e-10
    damping: float = 1e-9


@dataclass(frozen=True, eq=False)
class SolveReport:
    delta: SE3Transform
    iterations: int
    final_cost: float
    converged: bool
    inlier_count: int
    # effective per-correspondence weights (zero for excluded pairs)
    weights: np.ndarray = field(repr=False, default=None)

    def estimate(self, T_init: SE3Transform) -> SE3Transform:
        return T_init.compose(self.delta)


def correspondences_from_flow(depth: DepthImage, cloud: PointCloud, flow: FlowField,
                              K: PinholeIntrinsics) -> CorrespondenceSet:
    """Shift every rasterised point by the flow at its pixel.

    Weights are the flow's precision channel, so ``flow`` must be raw (not
    normalised).
    """
    if flow.normalized:
        raise ValueError("correspondence weights need a raw precision field, not a normalised one")
    if depth.shape != flow.shape:
        raise ValueError(f"depth {depth.shape} and flow {flow.shape} differ in size")
    mask = depth.occupied & flow.valid
    rows, cols = np.nonzero(mask)
    anchors = np.stack([depth.u[rows, cols], depth.v[rows, cols]], axis=1)
    targets = anchors + np.stack([flow.fu[rows, cols], flow.fv[rows, cols]], axis=1)
    weights = flow.q[rows, cols]
    keep = (in_scope(anchors[:, 0], anchors[:, 1], K) & (weights > 0)
            & np.all(np.isfinite(targets), axis=1))
    rows, cols = rows[keep], cols[keep]
    return CorrespondenceSet(
        cloud.points[depth.source_index[rows, cols]],
        targets[keep],
        weights[keep],
        np.stack([cols, rows], axis=1),
        anchors[keep],
    )


def _linearize(T_init: SE3Transform, dT: SE3Transform, points: np.ndarray, targets: np.ndarray,
               K: PinholeIntrinsics):
    """Residuals (M, 2), their Jacobians w.r.t. a right twist on ``dT`` (M, 2, 6), front mask."""
    T = T_init.compose(dT)
    Xc = T.apply(points)
    front = Xc[:, 2] > Z_MIN
    z = np.where(front, Xc[:, 2], 1.0)
    proj = np.stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=1)
    r = targets - proj
    # dXc/d(rho, phi) = R [I, -[P]x]
    dX = np.zeros((points.shape[0], 3, 6))
    dX[:, :, :3] = T.rotation
    dX[:, :, 3:] = -np.einsum("ij,njk->nik", T.rotation, _skew_batch(points))
    Jp = projection_jacobian(K, np.column_stack([Xc[:, :2], z]))
    J = -np.einsum("nij,njk->nik", Jp, dX)
    return r, J, front, Xc, dX


def _skew_batch(P: np.ndarray) -> np.ndarray:
    S = np.zeros((P.shape[0], 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -P[:, 2], P[:, 1]
    S[:, 1, 0], S[:, 1, 2] = P[:, 2], -P[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -P[:, 1], P[:, 0]
    return S


def _check_rank(H: np.ndarray) -> None:
    ev = np.linalg.eigvalsh(H)
    if not (ev[0] > 0 and ev[0] / ev[-1] > SINGULAR_RCOND):
        raise SingularSystemError(f"normal equations are rank deficient (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")


def _solve(T_init: SE3Transform, cs: CorrespondenceSet, K: PinholeIntrinsics, weights: np.ndarray,
           opts: SolverOptions) -> SolveReport:
    usable = weights > 0
    if int(usable.sum()) < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondencesError(
            f"need at least {MIN_CORRESPONDENCES} weighted correspondences, have {int(usable.sum())}")
    P, tgt = cs.points, cs.targets
    dT = SE3Transform.identity()
    converged = False
    iterations = 0
    for it in range(opts.max_iterations):
        r, J, front, _, _ = _linearize(T_init, dT, P, tgt, K)
        w = np.where(front, weights, 0.0)
        if int((w > 0).sum()) < MIN_CORRESPONDENCES:
            raise InsufficientCorrespondencesError("too few correspondences in front of the camera")
        H = np.einsum("n,nki,nkj->ij", w, J, J) + opts.damping * np.eye(6)
        g = np.einsum("n,nki,nk->i", w, J, r)
        _check_rank(H)
        step = -np.linalg.solve(H, g)
        dT = dT.compose(se3_exp(step))
        iterations = it + 1
        if np.max(np.abs(step)) < opts.convergence_tol:
            converged = True
            break
    r, _, front, _, _ = _linearize(T_init, dT, P, tgt, K)
    w = np.where(front, weights, 0.0)
    cost = 0.5 * float(np.sum(w * np.sum(r * r, axis=1)))
    return SolveReport(dT, iterations, cost, converged, int((w > 0).sum()), w)


def solve_weighted(T_init: SE3Transform, cs: CorrespondenceSet, K: PinholeIntrinsics,
                   opts: SolverOptions | None = None) -> SolveReport:
    """Minimise ``0.5 * sum_i w_i |target_i - project(T_init @ dT @ P_i)|^2`` over ``dT``."""
    if len(cs) < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondencesError(f"need at least {MIN_CORRESPONDENCES} correspondences, have {len(cs)}")
    return _solve(T_init, cs, K, cs.weights.copy(), opts or SolverOptions())


def solve_gated(T_init: SE3Transform, cs: CorrespondenceSet, K: PinholeIntrinsics, normalized_q,
                threshold: float = 0.5, opts: SolverOptions | None = None) -> SolveReport:
    """Drop pairs with normalised uncertainty ``>= threshold``; unit-weight least squares on the rest."""
    nq = np.asarray(normalized_q, dtype=float).reshape(len(cs))
    keep = nq < threshold
    if int(keep.sum()) < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondencesError(
            f"only {int(keep.sum())} correspondences pass the gate at threshold {threshold}")
    return _solve(T_init, cs, K, keep.astype(float), opts or SolverOptions())


def _residual_curvature(K: PinholeIntrinsics, P: np.ndarray, Xc: np.ndarray, dX: np.ndarray,
                        r: np.ndarray) -> np.ndarray:
    """``sum_k r_k * d2 r_k / d eps^2`` per correspondence, shape (M, 6, 6)."""
    m = P.shape[0]
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    # Hessians of u and v w.r.t. the camera-frame point
    Hu = np.zeros((m, 3, 3))
    Hu[:, 0, 2] = Hu[:, 2, 0] = -K.fx / z**2
    Hu[:, 2, 2] = 2 * K.fx * x / z**3
    Hv = np.zeros((m, 3, 3))
    Hv[:, 1, 2] = Hv[:, 2, 1] = -K.fy / z**2
    Hv[:, 2, 2] = 2 * K.fy * y / z**3

    # second-order part of exp(eps) P: 0.5 phi x rho + 0.5 phi x (phi x P)
    Y2 = np.zeros((m, 3, 6, 6))
    eps3 = np.zeros((3, 3, 3))
    eps3[0, 1, 2] = eps3[1, 2, 0] = eps3[2, 0, 1] = 1.0
    eps3[0, 2, 1] = eps3[2, 1, 0] = eps3[1, 0, 2] = -1.0
    # d2/dphi_a drho_b of 0.5 (phi x rho)_c = 0.5 eps[c, a, b]
    Y2[:, :, 3:, :3] = 0.5 * eps3
    Y2[:, :, :3, 3:] = 0.5 * eps3.transpose(0, 2, 1)
    I3 = np.eye(3)
    Y2[:, :, 3:, 3:] = (0.5 * (np.einsum("ca,nb->ncab", I3, P) + np.einsum("cb,na->ncab", I3, P))
                        - np.einsum("nc,ab->ncab", P, I3))
    R = dX[:, :, :3]
    X2 = np.einsum("nij,njab->niab", R, Y2)

    Jp = projection_jacobian(K, Xc)
    out = np.zeros((m, 6, 6))
    for k, Hk in enumerate((Hu, Hv)):
        d2 = np.einsum("nia,nij,njb->nab", dX, Hk, dX) + np.einsum("ni,niab->nab", Jp[:, k, :], X2)
        out -= r[:, k, None, None] * d2
    return out


def pose_jacobian_wrt_targets(report: SolveReport, cs: CorrespondenceSet, K: PinholeIntrinsics,
                              T_init: SE3Transform, hessian: str = "exact") -> np.ndarray:
    """Derivative of ``se3_log(dT*)`` w.r.t. the targets, shape ``(6, 2M)``.

    Columns are ordered ``(u_1, v_1, u_2, v_2, ...)``. Obtained by implicit
    differentiation of the first-order optimality condition; weights and the
    gating mask stored in ``report`` are held constant. ``hessian="exact"``
    includes the residual-curvature term, which makes the result exact at
    non-zero residuals; ``"gauss-newton"`` drops it.
    """
    if not report.converged:
        raise NotConvergedError("Jacobian requested for an unconverged solve")
    if hessian not in ("exact", "gauss-newton"):
        raise ValueError(f"unknown hessian mode {hessian!r}")
    w = report.weights if report.weights is not None else cs.weights
    r, J, front, Xc, dX = _linearize(T_init, report.delta, cs.points, cs.targets, K)
    w = np.where(front, w, 0.0)
    H = np.einsum("n,nki,nkj->ij", w, J, J)
    if hessian == "exact":
        H = H + np.einsum("n,nab->ab", w, _residual_curvature(K, cs.points, Xc, dX, r))
    try:
        _check_rank(H)
    except SingularSystemError as exc:
        raise SingularSystemError(f"Hessian at the solution is singular: {exc}") from None
    # d eps / d target_i = -H^-1 w_i J_i^T
    rhs = (w[:, None, None] * J).transpose(2, 0, 1).reshape(6, -1)
    d_eps = -np.linalg.solve(H, rhs)
    xi = se3_log(report.delta).vector()
    return np.linalg.solve(se3_right_jacobian(xi), d_eps)


def geodesic_loss(T_init: SE3Transform, dT: SE3Transform, T_gt: SE3Transform) -> float:
    """L1 norm of the twist taking the estimate ``T_init @ dT`` onto ``T_gt``."""
    return float(np.sum(np.abs(se3_log(T_init.compose(dT).inverse().compose(T_gt)).vector())))


def total_loss(lf: float, lg: float, lambda_f: float = 1.0, lambda_g: float = 1.0) -> float:
    if lambda_f < 0 or lambda_g < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda_f * lf + lambda_g * lg


__all__ = [
    "CorrespondenceSet", "SolverOptions", "SolveReport", "SolverError",
    "InsufficientCorrespondencesError", "SingularSystemError", "NotConvergedError",
    "correspondences_from_flow", "solve_weighted", "solve_gated",
    "pose_jacobian_wrt_targets", "geodesic_loss", "total_loss", "skew",
]
