"""Reading from the memory: vote for views by splatted surfel frequency.

The memory is read by rendering surfel ids from the averaged target pose,
counting how often each view index appears across pixels, suppressing
pose-similar candidates, and returning the top-K views. Three baseline
retrievers (recency, camera distance, frustum overlap) share the interface
for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, average_pose, pose_similar, translation_distance
from .raster import IdImage, rasterize_ids
from .store import SurfelStore, View

STRATEGIES = ("vmem", "temporal", "camera_distance", "fov")

# Frustum sampling lattice for the field-of-view baseline.
FOV_GRID = 16
FOV_DEPTHS = 8
FOV_NEAR = 0.1


@dataclass
class RetrievalConfig:
    """Context size, render resolution, and retrieval-side NMS thresholds."""

    k: int = 4
    render_width: int = 128
    render_height: int = 128
    nms_rot_deg: float = 15.0
    nms_trans: float = 0.05  # fraction of scene diagonal
    strategy: str = "vmem"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.render_width < 8 or self.render_height < 8:
            raise ValueError("render dimensions must be >= 8")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy: {self.strategy!r}")


def vote_topk(id_image: IdImage, store: SurfelStore, k: int, cfg: RetrievalConfig) -> list[int]:
    """Rank frame indices by pixel frequency, NMS pose-duplicates, keep top k.

    Every pixel votes for every index in its nearest surfel's view set. Ties
    are broken toward the newer frame; a candidate is dropped when its pose is
    similar to an already-kept, more frequent one.
    """
    counts: dict[int, int] = {}
    hit = id_image.ids[id_image.ids >= 0]
    if hit.size:
        uniq, pix = np.unique(hit, return_counts=True)
        for sid, c in zip(uniq.tolist(), pix.tolist()):
            for t in store.surfels[sid].view_indices:
                counts[t] = counts.get(t, 0) + c
    ranked = sorted(counts, key=lambda t: (-counts[t], -t))
    trans = cfg.nms_trans * store.scene_diagonal
    kept: list[int] = []
    for t in ranked:
        pose = store.views[t].camera.pose
        if any(
            pose_similar(pose, store.views[j].camera.pose, cfg.nms_rot_deg, trans)
            for j in kept
        ):
            continue
        kept.append(t)
        if len(kept) == k:
            break
    return kept


def read_memory(store: SurfelStore, target_cams: list[Camera], cfg: RetrievalConfig) -> list[View]:
    """Retrieve up to K reference views for a batch of target cameras.

    Renders the surfel index image from the averaged target pose and votes.
    With fewer than K retained views the whole memory is returned (voted
    frames first, then the rest by recency); with no surfels at all the most
    recent views are returned directly.
    """
    if not target_cams:
        raise ValueError("empty target camera list")
    retained = store.retained_frames()
    if store.surfel_count == 0:
        return [store.views[f] for f in sorted(retained, reverse=True)[: cfg.k]]
    avg = average_pose([c.pose for c in target_cams])
    intr = target_cams[0].intrinsics.with_resolution(cfg.render_width, cfg.render_height)
    image = rasterize_ids(store, Camera(avg, intr), (cfg.render_width, cfg.render_height))
    ranked = vote_topk(image, store, cfg.k, cfg)
    if len(retained) < cfg.k and len(ranked) < len(retained):
        rest = sorted((f for f in retained if f not in ranked), reverse=True)
        ranked = ranked + rest
    return [store.views[f] for f in ranked[: cfg.k]]


def baseline_temporal(store: SurfelStore, target_cams: list[Camera], k: int) -> list[View]:
    """The k most recent views, newest first."""
    return [store.views[f] for f in sorted(store.retained_frames(), reverse=True)[:k]]


def baseline_camera_distance(store: SurfelStore, target_cams: list[Camera], k: int) -> list[View]:
    """The k views with camera centers closest to the averaged target center."""
    center = average_pose([c.pose for c in target_cams]).translation
    frames = sorted(
        store.retained_frames(),
        key=lambda f: (translation_distance(store.views[f].camera.pose.translation, center), -f),
    )
    return [store.views[f] for f in frames[:k]]


def baseline_fov(store: SurfelStore, target_cams: list[Camera], k: int) -> list[View]:
    """The k views whose frusta contain the most target frustum samples.

    Samples a fixed lattice of the averaged target frustum (no occlusion test)
    and scores each candidate by the fraction of samples that project inside
    its image with positive depth.
    """
    avg = average_pose([c.pose for c in target_cams])
    intr = target_cams[0].intrinsics
    f, (cx, cy) = intr.focal, intr.principal_point
    us = ((np.arange(FOV_GRID) + 0.5) / FOV_GRID * intr.width - cx) / f
    vs = ((np.arange(FOV_GRID) + 0.5) / FOV_GRID * intr.height - cy) / f
    depths = np.linspace(FOV_NEAR, store.scene_diagonal, FOV_DEPTHS)
    uu, vv, zz = np.meshgrid(us, vs, depths)
    cam_pts = np.stack([uu * zz, vv * zz, zz], axis=-1).reshape(-1, 3)
    samples = avg.camera_to_world(cam_pts)

    def overlap(view: View) -> float:
        c = view.camera
        pc = c.pose.world_to_camera(samples)
        z = pc[:, 2]
        front = z > 1e-9
        if not front.any():
            return 0.0
        fi = c.intrinsics
        px = fi.focal * pc[front, 0] / z[front] + fi.principal_point[0]
        py = fi.focal * pc[front, 1] / z[front] + fi.principal_point[1]
        inside = (px >= 0) & (px < fi.width) & (py >= 0) & (py < fi.height)
        return float(np.count_nonzero(inside)) / len(samples)

    scores = {fr: overlap(store.views[fr]) for fr in store.retained_frames()}
    frames = sorted(scores, key=lambda fr: (-scores[fr], -fr))
    return [store.views[fr] for fr in frames[:k]]


def retrieve(store: SurfelStore, target_cams: list[Camera], cfg: RetrievalConfig) -> list[View]:
    """Dispatch to the configured retrieval strategy."""
    if cfg.strategy == "vmem":
        return read_memory(store, target_cams, cfg)
    if cfg.strategy == "temporal":
        return baseline_temporal(store, target_cams, cfg.k)
    if cfg.strategy == "camera_distance":
        return baseline_camera_distance(store, target_cams, cfg.k)
    if cfg.strategy == "fov":
        return baseline_fov(store, target_cams, cfg.k)
    raise ValueError(f"unknown strategy: {cfg.strategy!r}")
