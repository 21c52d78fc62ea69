"""Synthetic calibration experiments: scenes, perturbed extrinsics, oracle and corrupted flows."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .camera import DepthImage, PinholeIntrinsics, PointCloud, default_intrinsics, rasterize_depth
from .flow import FlowField, ground_truth_flow
from .geometry import (PerturbRange, SE3Transform, kitti_like_extrinsic, make_initial_extrinsic,
                       make_rng, sample_perturbation)

GEOMETRIES = ("uniform-frustum", "planes", "clusters")
N_PLANES = 3
N_CLUSTERS = 6
# smallest sigma used when turning a noise level into a precision
SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 3000
    depth_range: tuple[float, float] = (3.0, 40.0)
    fov_margin: float = 0.02
    geometry: str = "uniform-frustum"
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError("depth_range must satisfy 0 < min < max")
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        if not 0 <= self.fov_margin < 0.5:
            raise ValueError("fov_margin must lie in [0, 0.5)")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")


@dataclass(frozen=True)
class NoiseConfig:
    """Flow corruption. ``sigma_spread`` > 0 makes the inlier noise level vary
    per pixel (log-normal around ``flow_sigma``)."""

    flow_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 50.0
    uncertainty_informative: bool = True
    sigma_spread: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.flow_sigma < 0 or self.sigma_spread < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.outlier_fraction > 0 and not self.outlier_magnitude > self.flow_sigma:
            raise ValueError("outlier_magnitude must exceed flow_sigma")


@dataclass(frozen=True, eq=False)
class Experiment:
    cloud: PointCloud
    T_gt: SE3Transform
    T_init: SE3Transform
    depth: DepthImage
    flow_gt: FlowField
    flow_noisy: FlowField

    def __iter__(self):
        return iter((self.cloud, self.T_gt, self.T_init, self.depth, self.flow_gt, self.flow_noisy))


def _pixel_rays(rng: np.random.Generator, K: PinholeIntrinsics, margin: float, n: int) -> np.ndarray:
    u = rng.uniform(margin * K.width, (1 - margin) * K.width, n)
    v = rng.uniform(margin * K.height, (1 - margin) * K.height, n)
    return np.column_stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones(n)])


def _in_image(K: PinholeIntrinsics, Xc: np.ndarray, margin: float) -> np.ndarray:
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * Xc[:, 0] / z + K.cx
        v = K.fy * Xc[:, 1] / z + K.cy
    return ((z > 0) & (u >= margin * K.width) & (u < (1 - margin) * K.width)
            & (v >= margin * K.height) & (v < (1 - margin) * K.height))


def _frustum(rng, cfg: SceneConfig, K: PinholeIntrinsics, n: int) -> np.ndarray:
    rays = _pixel_rays(rng, K, cfg.fov_margin, n)
    return rays * rng.uniform(*cfg.depth_range, n)[:, None]


def _plane(rng, cfg: SceneConfig, K: PinholeIntrinsics, n: int) -> np.ndarray:
    lo, hi = cfg.depth_range
    normal = np.array([*rng.uniform(-0.4, 0.4, 2), 1.0])
    normal /= np.linalg.norm(normal)
    anchor = _pixel_rays(rng, K, 0.3, 1)[0] * math.sqrt(lo * hi) * rng.uniform(0.7, 1.3)
    offset = normal @ anchor
    out = np.zeros((0, 3))
    while out.shape[0] < n:
        rays = _pixel_rays(rng, K, cfg.fov_margin, 4 * n)
        z = offset / (rays @ normal)
        ok = (z > lo) & (z < hi)
        out = np.vstack([out, rays[ok] * z[ok, None]])
    return out[:n]


def _clusters(rng, cfg: SceneConfig, K: PinholeIntrinsics, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cfg.depth_range
    k = min(N_CLUSTERS, n)
    centers = _frustum(rng, cfg, K, k)
    labels = np.arange(n) % k
    pts = np.zeros((n, 3))
    todo = np.arange(n)
    while todo.size:
        c = centers[labels[todo]]
        cand = c + rng.normal(scale=0.03, size=(todo.size, 3)) * c[:, 2:3]
        ok = _in_image(K, cand, cfg.fov_margin) & (cand[:, 2] > lo) & (cand[:, 2] < hi)
        pts[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return pts, labels


def generate_scene(cfg: SceneConfig, K: PinholeIntrinsics, T_gt: SE3Transform,
                   rng: Optional[np.random.Generator] = None, return_labels: bool = False):
    """Sample a LiDAR-frame cloud whose points all project inside the image under ``T_gt``.

    With ``return_labels`` a per-point surface id (plane or cluster index;
    zeros for the frustum geometry) is returned alongside the cloud.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    n = cfg.n_points
    labels = np.zeros(n, dtype=np.int64)
    if cfg.geometry == "uniform-frustum":
        Xc = _frustum(rng, cfg, K, n)
    elif cfg.geometry == "planes":
        counts = np.full(min(N_PLANES, n), n // min(N_PLANES, n))
        counts[: n - counts.sum()] += 1
        Xc = np.vstack([_plane(rng, cfg, K, int(c)) for c in counts])
        labels = np.repeat(np.arange(counts.size), counts)
    else:
        Xc, labels = _clusters(rng, cfg, K, n)
    cloud = PointCloud(T_gt.inverse().apply(Xc), np.full(n, 0.5))
    return (cloud, labels) if return_labels else cloud


def corrupt_flow(gt: FlowField, cfg: NoiseConfig, rng: Optional[np.random.Generator] = None) -> FlowField:
    """Gaussian noise on valid pixels plus a fraction replaced by gross errors.

    Outlier errors are uniform over the disc of radius ``outlier_magnitude``.
    With informative uncertainty each pixel gets ``q = 1 / sigma_eff^2``,
    where outliers use ``outlier_magnitude`` as their sigma; otherwise ``q``
    is the same inlier precision everywhere.
    """
    if cfg.flow_sigma == 0 and cfg.outlier_fraction == 0:
        return replace(gt, fu=gt.fu.copy(), fv=gt.fv.copy(), q=gt.q.copy(), valid=gt.valid.copy())
    rng = make_rng(cfg.seed) if rng is None else rng
    idx = np.flatnonzero(gt.valid)
    n = idx.size
    sigma = np.full(n, cfg.flow_sigma)
    if cfg.sigma_spread > 0:
        sigma = sigma * np.exp(cfg.sigma_spread * rng.standard_normal(n))
    err = rng.standard_normal((n, 2)) * sigma[:, None]
    n_out = int(round(cfg.outlier_fraction * n))
    out = rng.permutation(n)[:n_out]
    radius = cfg.outlier_magnitude * np.sqrt(rng.uniform(size=n_out))
    angle = rng.uniform(0.0, 2.0 * math.pi, n_out)
    err[out] = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])

    sigma_eff = np.maximum(sigma, SIGMA_FLOOR)
    if cfg.uncertainty_informative:
        sigma_eff[out] = max(cfg.outlier_magnitude, SIGMA_FLOOR)
    else:
        sigma_eff[:] = max(cfg.flow_sigma, SIGMA_FLOOR)

    fu, fv, q = gt.fu.copy(), gt.fv.copy(), gt.q.copy()
    fu.flat[idx] += err[:, 0]
    fv.flat[idx] += err[:, 1]
    q.flat[idx] = 1.0 / sigma_eff**2
    return FlowField(fu, fv, q, gt.valid.copy())


def make_experiment(scene: SceneConfig, noise: NoiseConfig, perturb: PerturbRange,
                    K: PinholeIntrinsics, seed: int = 0,
                    base_extrinsic: Optional[SE3Transform] = None,
                    gt_jitter: Optional[PerturbRange] = PerturbRange(0.05, math.radians(2.0))) -> Experiment:
    """Build one frame: ``T_gt`` (base pose jittered), ``T_init = T_gt @ dT^-1``, raster and flows.

    Every random draw derives from ``(seed, scene.seed, noise.seed)``.
    """
    streams = np.random.SeedSequence([seed, scene.seed, noise.seed]).spawn(4)
    r_gt, r_scene, r_pert, r_noise = (np.random.Generator(np.random.Philox(s)) for s in streams)
    T_gt = base_extrinsic or kitti_like_extrinsic()
    if gt_jitter is not None:
        T_gt = T_gt.compose(sample_perturbation(gt_jitter, r_gt))
    cloud = generate_scene(scene, K, T_gt, rng=r_scene)
    dT = sample_perturbation(perturb, r_pert)
    T_init = make_initial_extrinsic(T_gt, dT)
    depth = rasterize_depth(cloud, T_init, K)
    flow_gt = ground_truth_flow(cloud, T_init, T_gt, K)
    flow_noisy = corrupt_flow(flow_gt, noise, rng=r_noise)
    return Experiment(cloud, T_gt, T_init, depth, flow_gt, flow_noisy)


@dataclass(frozen=True)
class SimConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(flow_sigma=0.5, outlier_fraction=0.1))
    perturb: PerturbRange = field(default_factory=lambda: PerturbRange.from_degrees(0.10, 5.0))
    camera: PinholeIntrinsics = field(default_factory=default_intrinsics)


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def _apply(obj, values: dict):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    kw = {}
    for key, raw in values.items():
        if key not in known:
            raise KeyError(f"unknown key {key!r} for {type(obj).__name__}")
        kw[key] = _coerce(raw, known[key]) if isinstance(raw, str) else raw
    return replace(obj, **kw)


def load_sim_config(path: Optional[str | Path] = None, overrides: Optional[dict] = None) -> SimConfig:
    """Read an INI-style file with ``[scene]``, ``[noise]``, ``[perturbation]`` and
    ``[camera]`` sections; ``overrides`` maps ``"section.key"`` to values and wins.

    Scene depth bounds are ``depth_min``/``depth_max``; perturbation keys are
    ``max_translation`` (m) and ``max_rotation_deg``.
    """
    sections: dict[str, dict] = {"scene": {}, "noise": {}, "perturbation": {}, "camera": {}}
    if path is not None:
        cp = configparser.ConfigParser()
        with open(path) as fh:
            cp.read_file(fh)
        for name in cp.sections():
            if name not in sections:
                raise KeyError(f"unknown config section [{name}]")
            sections[name].update(cp[name])
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        name, key = dotted.split(".", 1)
        sections[name][key] = value

    base = SimConfig()
    scene_kv = dict(sections["scene"])
    lo = scene_kv.pop("depth_min", None)
    hi = scene_kv.pop("depth_max", None)
    scene = _apply(base.scene, scene_kv)
    if lo is not None or hi is not None:
        dlo, dhi = scene.depth_range
        scene = replace(scene, depth_range=(float(lo if lo is not None else dlo), float(hi if hi is not None else dhi)))
    noise = _apply(base.noise, sections["noise"])
    pert_kv = dict(sections["perturbation"])
    max_t = float(pert_kv.pop("max_translation", base.perturb.max_translation))
    max_r = math.radians(float(pert_kv.pop("max_rotation_deg", math.degrees(base.perturb.max_rotation))))
    if pert_kv:
        raise KeyError(f"unknown perturbation keys {sorted(pert_kv)}")
    camera = _apply(base.camera, sections["camera"]) if sections["camera"] else base.camera
    return SimConfig(scene, noise, PerturbRange(max_t, max_r), camera)
