"""evfusion: photorealistic frame reconstruction from hybrid event + intensity streams."""

from .core import (
    CameraIntrinsics,
    DepthMap,
    IntensityFrame,
    Pose,
    backproject,
    identity_pose,
    project,
    se3_compose,
    se3_exp,
    se3_invert,
    se3_log,
)
from .config import PipelineConfig
from .depth_opt import DepthPoseEstimate, estimate_depth_and_pose, photometric_loss, smoothness_loss
from .events import Event, EventStream, complementary_filter, frame_events, parse_events, pseudo_intensity
from .flow import FlowField, depth_from_flow, edge_aware_refine, estimate_flow, import_flow
from .metrics import psnr, ssim
from .optim import OptimizerSettings
from .pipeline import run_baseline_cf, run_pipeline
from .pose_opt import IntermediatePoseEstimate, estimate_intermediate_pose, pose_photometric_loss
from .renderer import render_intermediate, render_sequence
from .sim import SyntheticScene, Trajectory, corrupt_events, generate_events, render_view
from .warp import SplatBuffer, WarpResult, bilinear_sample, blend, forward_splat, inverse_warp

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "DepthMap",
    "IntensityFrame",
    "Pose",
    "backproject",
    "identity_pose",
    "project",
    "se3_compose",
    "se3_exp",
    "se3_invert",
    "se3_log",
    "PipelineConfig",
    "DepthPoseEstimate",
    "estimate_depth_and_pose",
    "photometric_loss",
    "smoothness_loss",
    "Event",
    "EventStream",
    "complementary_filter",
    "frame_events",
    "parse_events",
    "pseudo_intensity",
    "FlowField",
    "depth_from_flow",
    "edge_aware_refine",
    "estimate_flow",
    "import_flow",
    "psnr",
    "ssim",
    "OptimizerSettings",
    "run_baseline_cf",
    "run_pipeline",
    "IntermediatePoseEstimate",
    "estimate_intermediate_pose",
    "pose_photometric_loss",
    "render_intermediate",
    "render_sequence",
    "SyntheticScene",
    "Trajectory",
    "corrupt_events",
    "generate_events",
    "render_view",
    "SplatBuffer",
    "WarpResult",
    "bilinear_sample",
    "blend",
    "forward_splat",
    "inverse_warp",
]
