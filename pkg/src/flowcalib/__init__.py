"""LiDAR-camera extrinsic calibration from calibration flow with uncertainty."""

from .camera import DepthImage, PinholeIntrinsics, PointCloud, default_intrinsics, project_point, rasterize_depth
from .flow import FlowField, ground_truth_flow, normalize_uncertainty, select_high_quality
from .geometry import EulerAngles, PerturbRange, SE3Transform, Twist, se3_exp, se3_log
from .metrics import CalibrationError, calibration_error
from .sim import NoiseConfig, SceneConfig, make_experiment
from .solver import CorrespondenceSet, SolveReport, correspondences_from_flow, solve_gated, solve_weighted

__version__ = "0.1.0"
