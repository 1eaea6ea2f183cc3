"""Surfel-indexed view memory with a synthetic-world evaluation harness."""

from .geometry import (
    Camera,
    CameraPose,
    Intrinsics,
    PointMap,
    Quaternion,
    average_pose,
    compute_normal,
    compute_radius,
    downsample_pointmap,
    project,
    ray_through_pixel,
    rotation_distance,
    translation_distance,
)
from .harness import EpisodeLog, MetricsReport, Trajectory, cycle_protocol, run_ablation, run_exploration, score_episode
from .raster import IdImage, rasterize_ids, raycast_ids_oracle
from .retrieval import (
    RetrievalConfig,
    baseline_camera_distance,
    baseline_fov,
    baseline_temporal,
    read_memory,
    retrieve,
    vote_topk,
)
from .store import MergeConfig, Surfel, SurfelStore, View, WriteReport
from .world import (
    Box,
    Checker,
    NoiseParams,
    Rect,
    Scene,
    SceneSpec,
    build_scene,
    camera_at,
    perturb_depth,
    preset_scene,
    relevance_oracle,
    render,
    visibility_oracle,
)

__version__ = "0.1.0"
