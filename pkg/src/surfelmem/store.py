"""Surfel-indexed view memory: the store, its write path, and pose-based view NMS.

A surfel is an oriented disk observed by a set of views. Writing a batch of
views converts their point maps into candidate surfels, merges each candidate
into a matching existing surfel (or appends it), then prunes views whose poses
duplicate newer ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, DegenerateNormalError, PointMap, downsample_pointmap
from .octree import Octree


@dataclass
class Surfel:
    """Oriented disk: position, unit normal, radius, and observing view indices."""

    position: np.ndarray
    normal: np.ndarray
    radius: float
    view_indices: list[int]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-6:
            raise ValueError("surfel normal must be unit length")
        if not self.radius > 0:
            raise ValueError("surfel radius must be positive")
        idx = sorted(set(int(i) for i in self.view_indices))
        if not idx or idx[0] < 1:
            raise ValueError("view indices must be a nonempty set of positive ints")
        self.view_indices = idx


@dataclass
class View:
    """One remembered frame: index, RGB image (None once NMS-discarded), camera."""

    frame_index: int
    image: np.ndarray | None
    camera: Camera

    def __post_init__(self):
        if self.frame_index < 1:
            raise ValueError("frame_index must be positive")
        if self.image is not None:
            self.image = np.asarray(self.image, dtype=np.uint8)
            h, w = self.image.shape[:2]
            intr = self.camera.intrinsics
            if self.image.ndim != 3 or self.image.shape[2] != 3:
                raise ValueError("image must be HxWx3")
            if (w, h) != (intr.width, intr.height):
                raise ValueError("image dimensions do not match camera intrinsics")

    @property
    def retained(self) -> bool:
        return self.image is not None


@dataclass
class MergeConfig:
    """Thresholds for surfel merging, point-map downsampling, and write-side view NMS."""

    merge_distance_scale: float = 1.0  # kappa: match distance = kappa * min(radii)
    normal_cos_threshold: float = 0.866  # cos 30 deg
    view_nms_rot_deg: float = 15.0
    view_nms_trans: float = 0.05  # fraction of scene diagonal
    sigma: float = 0.03  # point-map downsampling factor
    alpha: float = 0.2  # grazing-angle floor in the radius formula
    # A pixel whose 4-neighborhood straddles a depth discontinuity yields a
    # bogus diagonal normal and an oversized disk. Two gates reject such
    # pixels: the center may sit no farther off either neighbor line than
    # planarity_tol times the local grid spacing (creases), and opposite
    # neighbors may differ in depth by at most depth_ratio_max (occlusions).
    planarity_tol: float = 0.3
    depth_ratio_max: float = 2.0

    def __post_init__(self):
        if self.merge_distance_scale <= 0:
            raise ValueError("merge_distance_scale must be positive")
        if not (-1 < self.normal_cos_threshold <= 1):
            raise ValueError("normal_cos_threshold must be in (-1, 1]")
        if self.view_nms_rot_deg < 0 or self.view_nms_trans < 0:
            raise ValueError("view NMS thresholds must be >= 0")
        if not (0 < self.sigma <= 1):
            raise ValueError("sigma must be in (0, 1]")
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        if self.planarity_tol <= 0:
            raise ValueError("planarity_tol must be positive")
        if self.depth_ratio_max <= 1:
            raise ValueError("depth_ratio_max must exceed 1")


@dataclass
class WriteReport:
    surfels_added: int = 0
    surfels_merged: int = 0
    views_discarded: list[int] = field(default_factory=list)


class SurfelStore:
    """Octree-accelerated surfel set plus the view table it indexes.

    Single-writer / multi-reader: writes require exclusive access; queries and
    rasterization never mutate.
    """

    def __init__(
        self,
        merge_config: MergeConfig | None = None,
        scene_diagonal: float = 1.0,
    ):
        self.merge_config = merge_config or MergeConfig()
        if scene_diagonal <= 0:
            raise ValueError("scene_diagonal must be positive")
        self.scene_diagonal = float(scene_diagonal)
        self.surfels: dict[int, Surfel] = {}
        self.views: dict[int, View] = {}
        self.next_frame: int = 1
        self.retrieval_config = None  # optional default, serialized in snapshots
        self._octree = Octree()
        self._next_surfel_id = 0
        self._version = 0
        self._array_cache: tuple | None = None

    # -- basic accessors -------------------------------------------------

    @property
    def surfel_count(self) -> int:
        return len(self.surfels)

    def retained_frames(self) -> list[int]:
        """Frame indices still holding an image, ascending."""
        return sorted(f for f, v in self.views.items() if v.retained)

    def raster_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(ids, positions, normals, radii) in ascending-id order, cached per version."""
        if self._array_cache is not None and self._array_cache[0] == self._version:
            return self._array_cache[1]
        ids = np.array(sorted(self.surfels), dtype=np.int64)
        n = len(ids)
        pos = np.empty((n, 3))
        nrm = np.empty((n, 3))
        rad = np.empty(n)
        for row, sid in enumerate(ids):
            s = self.surfels[sid]
            pos[row] = s.position
            nrm[row] = s.normal
            rad[row] = s.radius
        arrays = (ids, pos, nrm, rad)
        self._array_cache = (self._version, arrays)
        return arrays

    # -- write path ------------------------------------------------------

    def insert_or_merge(self, candidate: Surfel) -> tuple[str, int]:
        """Merge into the nearest matching surfel, else append.

        A match lies within kappa * min(radii) of the candidate and has normal
        cosine above the threshold. Returns ("merged"|"inserted", surfel id).
        """
        cfg = self.merge_config
        kappa = cfg.merge_distance_scale
        p = candidate.position
        px, py, pz = float(p[0]), float(p[1]), float(p[2])
        # min(r_existing, r_cand) <= r_cand, so this ball covers every possible match.
        nearby = self._octree.query_radius((px, py, pz), kappa * candidate.radius)
        best_id = -1
        best_d2 = math.inf
        if nearby:
            nc = candidate.normal
            for sid in nearby:
                s = self.surfels[sid]
                sp = s.position
                dx, dy, dz = float(sp[0]) - px, float(sp[1]) - py, float(sp[2]) - pz
                d2 = dx * dx + dy * dy + dz * dz
                limit = kappa * min(s.radius, candidate.radius)
                if d2 > limit * limit:
                    continue
                if float(s.normal @ nc) <= cfg.normal_cos_threshold:
                    continue
                if d2 < best_d2:
                    best_d2 = d2
                    best_id = sid
        if best_id >= 0:
            existing = self.surfels[best_id]
            for t in candidate.view_indices:
                if t not in existing.view_indices:
                    existing.view_indices.append(t)
            existing.view_indices.sort()
            self._version += 1
            return "merged", best_id
        sid = self._next_surfel_id
        self._next_surfel_id += 1
        self.surfels[sid] = candidate
        self._octree.insert(sid, (px, py, pz))
        self._version += 1
        return "inserted", sid

    def write_views(self, new_views: list[View], pointmaps: list[PointMap]) -> WriteReport:
        """Add a batch of views: surfelize their point maps, merge, then run view NMS."""
        if len(new_views) != len(pointmaps):
            raise ValueError("pointmap/view count mismatch")
        seen = set()
        for v in new_views:
            if v.frame_index in self.views or v.frame_index in seen:
                raise ValueError(f"frame-index collision: {v.frame_index}")
            seen.add(v.frame_index)
        report = WriteReport()
        for view, pm in zip(new_views, pointmaps):
            added, merged = self._write_one(view, pm)
            report.surfels_added += added
            report.surfels_merged += merged
            self.views[view.frame_index] = view
            self.next_frame = max(self.next_frame, view.frame_index + 1)
        report.views_discarded = self.view_nms()
        return report

    def _write_one(self, view: View, pm: PointMap) -> tuple[int, int]:
        cfg = self.merge_config
        small = downsample_pointmap(pm, cfg.sigma)
        cam = view.camera
        center = cam.pose.translation
        frame = view.frame_index
        # Radii use the focal of the grid the surfels live on: one surfel per
        # downsampled pixel, radius half its footprint, so disks tile the
        # surface instead of leaving 1/sigma-wide gaps.
        focal = cam.intrinsics.focal * (small.width / pm.width)

        pts = small.points
        val = small.valid
        # Interior pixels with a full 4-neighborhood; matches compute_normal exactly.
        core = val[1:-1, 1:-1] & val[1:-1, 2:] & val[1:-1, :-2] & val[2:, 1:-1] & val[:-2, 1:-1]
        du = pts[1:-1, 2:] - pts[1:-1, :-2]
        dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
        normals = np.cross(du, dv)
        norms = np.linalg.norm(normals, axis=-1)
        core &= norms >= 1e-12
        p_core = pts[1:-1, 1:-1]
        fwd = cam.pose.matrix[:, 2]
        depth_all = (pts - center) @ fwd
        depths = depth_all[1:-1, 1:-1]
        core &= depths > 0
        # Occlusion gate: a large depth jump between opposite neighbors means
        # the neighborhood spans two different surfaces.
        with np.errstate(divide="ignore", invalid="ignore"):
            ru = np.maximum(depth_all[1:-1, 2:], depth_all[1:-1, :-2]) / np.minimum(
                depth_all[1:-1, 2:], depth_all[1:-1, :-2]
            )
            rv = np.maximum(depth_all[2:, 1:-1], depth_all[:-2, 1:-1]) / np.minimum(
                depth_all[2:, 1:-1], depth_all[:-2, 1:-1]
            )
            core &= (ru <= cfg.depth_ratio_max) & (rv <= cfg.depth_ratio_max)
        # Crease gate: on any planar patch the three points along an image axis
        # are collinear, so a center far off either neighbor line would yield a
        # bogus diagonal normal.
        safe = np.where(norms[..., None] >= 1e-12, norms[..., None], 1.0)
        unit = normals / safe
        du_len = np.linalg.norm(du, axis=-1)
        dv_len = np.linalg.norm(dv, axis=-1)
        e_u = np.linalg.norm(np.cross(p_core - pts[1:-1, :-2], p_core - pts[1:-1, 2:]), axis=-1)
        e_v = np.linalg.norm(np.cross(p_core - pts[:-2, 1:-1], p_core - pts[2:, 1:-1]), axis=-1)
        with np.errstate(invalid="ignore"):
            core &= e_u <= cfg.planarity_tol * du_len * du_len
            core &= e_v <= cfg.planarity_tol * dv_len * dv_len
        if not core.any():
            return 0, 0

        normals = unit[core]
        p_sel = p_core[core]
        d_sel = depths[core]
        viewdir = p_sel - center
        viewlen = np.linalg.norm(viewdir, axis=-1)
        facing = np.einsum("ij,ij->i", normals, viewdir)
        normals[facing > 0] *= -1.0
        cos_term = np.abs(facing) / viewlen
        radii = (0.5 * d_sel / focal) / (cfg.alpha + (1.0 - cfg.alpha) * cos_term)

        added = merged = 0
        for i in range(len(p_sel)):
            outcome, _ = self.insert_or_merge(
                Surfel(p_sel[i], normals[i], float(radii[i]), [frame])
            )
            if outcome == "inserted":
                added += 1
            else:
                merged += 1
        return added, merged

    def view_nms(self) -> list[int]:
        """Drop older views that pose-duplicate newer ones; returns discarded frames.

        Keeps the newest view of every similar-pose cluster (greedy, newest
        first), removes discarded indices from all surfels, and deletes surfels
        left with no observers. Discarded views keep their pose as a tombstone.
        """
        cfg = self.merge_config
        trans = cfg.view_nms_trans * self.scene_diagonal
        frames = sorted(self.retained_frames(), reverse=True)
        centers = np.array([self.views[f].camera.pose.translation for f in frames])
        quats = np.array([self.views[f].camera.pose.rotation.as_array() for f in frames])
        cos_half = math.cos(math.radians(cfg.view_nms_rot_deg) / 2.0)
        kept_rows: list[int] = []
        discarded: list[int] = []
        for row, f in enumerate(frames):
            if kept_rows:
                kc = centers[kept_rows]
                near = np.linalg.norm(kc - centers[row], axis=1) < trans
                if near.any():
                    # |q . q'| = cos(angle/2): rotation within the threshold.
                    dots = np.abs(quats[kept_rows][near] @ quats[row])
                    if (dots > cos_half).any():
                        discarded.append(f)
                        continue
            kept_rows.append(row)
        if not discarded:
            return []
        gone = set(discarded)
        for f in discarded:
            self.views[f].image = None
        empty: list[int] = []
        for sid, s in self.surfels.items():
            if gone.intersection(s.view_indices):
                s.view_indices = [t for t in s.view_indices if t not in gone]
                if not s.view_indices:
                    empty.append(sid)
        for sid in empty:
            self._octree.remove(sid, self.surfels[sid].position)
            del self.surfels[sid]
        self._version += 1
        return sorted(discarded)

    # -- queries ---------------------------------------------------------

    def radius_query(self, center, radius: float) -> list[int]:
        """Exactly the surfels within `radius` of `center`, ascending ids."""
        return self._octree.query_radius(center, radius)

    def octree_matches_list(self) -> bool:
        """Full-scan structural check used by tests and snapshot validation."""
        return self._octree.all_ids() == sorted(self.surfels)
