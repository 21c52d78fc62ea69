"""Central-difference check of the pose-vs-target Jacobian on seeded instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .camera import PinholeIntrinsics, default_intrinsics, project_points
from .geometry import (PerturbRange, SE3Transform, kitti_like_extrinsic, make_initial_extrinsic, make_rng,
                       sample_perturbation, se3_log)
from .solver import (CorrespondenceSet, NotConvergedError, SolverOptions, pose_jacobian_wrt_targets,
                     solve_weighted)

FD_STEP = 1e-4
TOLERANCE = 1e-4


@dataclass(frozen=True, eq=False)
class GradcheckInstance:
    T_init: SE3Transform
    T_gt: SE3Transform
    correspondences: CorrespondenceSet
    K: PinholeIntrinsics


@dataclass(frozen=True)
class GradcheckResult:
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def make_instance(seed: int, n_points: int = 20, pixel_noise: float = 0.5,
                  K: PinholeIntrinsics | None = None) -> GradcheckInstance:
    """Random well-spread points, noisy weighted targets and a perturbed start."""
    K = K or default_intrinsics()
    rng = make_rng(seed)
    T_gt = kitti_like_extrinsic().compose(sample_perturbation(PerturbRange(0.05, 0.03), rng))
    u = rng.uniform(0.05 * K.width, 0.95 * K.width, n_points)
    v = rng.uniform(0.05 * K.height, 0.95 * K.height, n_points)
    z = rng.uniform(3.0, 30.0, n_points)
    Xc = np.column_stack([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z])
    P = T_gt.inverse().apply(Xc)
    T_init = make_initial_extrinsic(T_gt, sample_perturbation(PerturbRange.from_degrees(0.10, 5.0), rng))
    uv, _, _ = project_points(T_gt, K, P)
    targets = uv + pixel_noise * rng.standard_normal(uv.shape)
    weights = rng.uniform(0.5, 2.0, n_points)
    return GradcheckInstance(T_init, T_gt, CorrespondenceSet.from_arrays(P, targets, weights), K)


def finite_difference_jacobian(T_init: SE3Transform, cs: CorrespondenceSet, K: PinholeIntrinsics,
                               step: float = FD_STEP, opts: SolverOptions | None = None) -> np.ndarray:
    """Re-solve with each target coordinate nudged by +-step; (6, 2M)."""
    base = cs.targets.ravel()
    out = np.zeros((6, base.size))
    for j in range(base.size):
        xis = []
        for sgn in (1.0, -1.0):
            t = base.copy()
            t[j] += sgn * step
            rep = solve_weighted(T_init, cs.with_targets(t.reshape(-1, 2)), K, opts)
            if not rep.converged:
                raise NotConvergedError(f"finite-difference solve for coordinate {j} did not converge")
            xis.append(se3_log(rep.delta).vector())
        out[:, j] = (xis[0] - xis[1]) / (2.0 * step)
    return out


def relative_error(J: np.ndarray, J_ref: np.ndarray) -> float:
    """Largest entry-wise discrepancy, scaled by the largest reference entry."""
    return float(np.max(np.abs(J - J_ref)) / np.max(np.abs(J_ref)))


def check_instance(inst: GradcheckInstance, jacobian_fn: Callable | None = None) -> float:
    jacobian_fn = jacobian_fn or pose_jacobian_wrt_targets
    rep = solve_weighted(inst.T_init, inst.correspondences, inst.K)
    if not rep.converged:
        raise NotConvergedError("base solve did not converge")
    J = jacobian_fn(rep, inst.correspondences, inst.K, inst.T_init)
    J_fd = finite_difference_jacobian(inst.T_init, inst.correspondences, inst.K)
    return relative_error(J, J_fd)


def run_gradcheck(seed: int = 0, n_instances: int = 50, jacobian_fn: Callable | None = None,
                  n_points: int = 20) -> list[GradcheckResult]:
    results = []
    for k in range(n_instances):
        s = seed + k
        results.append(GradcheckResult(s, check_instance(make_instance(s, n_points), jacobian_fn)))
    return results
