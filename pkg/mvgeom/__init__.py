r"""The :mod:`mvgeom` package keeps the frames of a pose-conditioned video
diffusion sampler geometrically consistent: anchor features are lifted to a
depth mesh, rendered into the other camera poses and substituted during
denoising, and the regions the anchor cannot see are re-noised before each
update.
"""
from ._base import MvgeomError, DomainError, BehindCameraError, \
    FormatError, ConfigError, DepthProviderError

from .camera import Intrinsics, RigidPose, CameraPose, project, unproject, \
    read_trajectory, write_trajectory
from .gridio import FeatureGrid, read_grid, write_grid, resize_bilinear
from .depthmesh import AnchorFeatureMesh, align_depth, grid_triangulate, \
    prune_discontinuities, build_anchor_mesh, median_depth_search
from .rasterizer import RenderOutput, render, render_bruteforce
from .scheduler import DiffusionSchedule, LatentVideo, ddpm_forward, \
    predict_x0, ddim_step
from .denoiser import Conditioning, DenoiserHooks, make_denoiser
from .attention import stt_attention, temporal_attention_1d, field_at_step
from .featurefield import ReferenceSet, render_feature_map, \
    composite_weights
from .pipeline import PipelineConfig, feature_replace, latent_complete, \
    choose_anchor_frame, run_inference
from .synthscene import SceneSpec, render_ground_truth, make_trajectory
from .metrics import rotation_angle, camera_pose_accuracy, \
    masked_reprojection_error


__all__ = ["MvgeomError", "DomainError", "BehindCameraError", "FormatError",
           "ConfigError", "DepthProviderError",
           "Intrinsics", "RigidPose", "CameraPose", "project", "unproject",
           "read_trajectory", "write_trajectory",
           "FeatureGrid", "read_grid", "write_grid", "resize_bilinear",
           "AnchorFeatureMesh", "align_depth", "grid_triangulate",
           "prune_discontinuities", "build_anchor_mesh",
           "median_depth_search",
           "RenderOutput", "render", "render_bruteforce",
           "DiffusionSchedule", "LatentVideo", "ddpm_forward", "predict_x0",
           "ddim_step",
           "Conditioning", "DenoiserHooks", "make_denoiser",
           "stt_attention", "temporal_attention_1d", "field_at_step",
           "ReferenceSet", "render_feature_map", "composite_weights",
           "PipelineConfig", "feature_replace", "latent_complete",
           "choose_anchor_frame", "run_inference",
           "SceneSpec", "render_ground_truth", "make_trajectory",
           "rotation_angle", "camera_pose_accuracy",
           "masked_reprojection_error"]


__version__ = '0.1.0.dev0'
