"""Deterministic procedural scenes with ground-truth geometry.

Scenes are unions of axis-aligned boxes and axis-aligned wall rectangles with
flat or checkerboard colors. Rendering is exact per-pixel raycasting, which
doubles as the ground-truth source for depth, world-frame point maps, and the
visibility oracles used to score retrieval quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, CameraPose, Intrinsics, PointMap, Quaternion, pixel_ray_grid

_EPS = 1e-9

# Surface samples per scene diagonal for the visibility oracle id lattice.
SAMPLE_DIVISIONS = 256


@dataclass(frozen=True)
class Checker:
    """Two-tone checkerboard evaluated in a primitive's local surface coords."""

    color_a: tuple[int, int, int]
    color_b: tuple[int, int, int]
    pitch: float = 0.5


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: the plane axis=offset clipped to u/v ranges.

    Local (u, v) axes are the two world axes other than `axis`, in order.
    """

    axis: int  # 0, 1, or 2: the normal axis
    offset: float
    u_range: tuple[float, float]
    v_range: tuple[float, float]
    color: tuple[int, int, int] | Checker = (200, 200, 200)

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1, or 2")
        if self.u_range[0] >= self.u_range[1] or self.v_range[0] >= self.v_range[1]:
            raise ValueError("rectangle extents must be positive")

    @property
    def uv_axes(self) -> tuple[int, int]:
        return tuple(a for a in (0, 1, 2) if a != self.axis)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty(3)
        hi = np.empty(3)
        ua, va = self.uv_axes
        lo[self.axis] = hi[self.axis] = self.offset
        lo[ua], hi[ua] = self.u_range
        lo[va], hi[va] = self.v_range
        return lo, hi


@dataclass(frozen=True)
class Box:
    """Solid axis-aligned box."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    color: tuple[int, int, int] | Checker = (200, 200, 200)

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.min_corner, self.max_corner)):
            raise ValueError("box extents must be positive")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.min_corner, float), np.asarray(self.max_corner, float)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    primitives: tuple
    diagonal: float | None = None  # validated against the bounding box when given

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")


@dataclass(frozen=True)
class NoiseParams:
    """Multiplicative Gaussian depth noise plus pixel dropout."""

    depth_sigma_rel: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.depth_sigma_rel < 0:
            raise ValueError("depth_sigma_rel must be >= 0")
        if not (0 <= self.dropout_prob < 1):
            raise ValueError("dropout_prob must be in [0, 1)")

    @property
    def enabled(self) -> bool:
        return self.depth_sigma_rel > 0 or self.dropout_prob > 0


@dataclass
class RenderOutput:
    """Ground-truth render: 8-bit RGB, camera-frame depth, world point map."""

    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, +inf where no surface was hit
    pointmap: PointMap
    camera: Camera


class Scene:
    """Immutable raycastable union of primitives."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.primitives = list(spec.primitives)
        los, his = zip(*(p.bounds() for p in self.primitives))
        self.bbox_min = np.min(np.stack(los), axis=0)
        self.bbox_max = np.max(np.stack(his), axis=0)
        self.diagonal = float(np.linalg.norm(self.bbox_max - self.bbox_min))
        if spec.diagonal is not None and abs(spec.diagonal - self.diagonal) > 1e-6:
            raise ValueError("declared scene diagonal does not match bounding box")
        self.sample_pitch = self.diagonal / SAMPLE_DIVISIONS

    # -- ray casting -----------------------------------------------------

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest hit for rays (N, 3): returns (t (N,), primitive index (N,)).

        t is +inf and index -1 where nothing is hit.
        """
        n = dirs.shape[0]
        best_t = np.full(n, np.inf)
        best_p = np.full(n, -1, dtype=np.int64)
        for pi, prim in enumerate(self.primitives):
            t = self._intersect_one(prim, origins, dirs)
            closer = t < best_t
            best_t[closer] = t[closer]
            best_p[closer] = pi
        return best_t, best_p

    @staticmethod
    def _intersect_one(prim, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        if isinstance(prim, Rect):
            a = prim.axis
            ua, va = prim.uv_axes
            d = dirs[:, a]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (prim.offset - origins[:, a]) / d
            t = np.where(np.abs(d) < 1e-15, np.inf, t)
            u = origins[:, ua] + t * dirs[:, ua]
            v = origins[:, va] + t * dirs[:, va]
            ok = (
                (t > _EPS)
                & (u >= prim.u_range[0]) & (u <= prim.u_range[1])
                & (v >= prim.v_range[0]) & (v <= prim.v_range[1])
            )
            return np.where(ok, t, np.inf)
        lo, hi = prim.bounds()
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t_lo = (lo[None, :] - origins) * inv
        t_hi = (hi[None, :] - origins) * inv
        # Parallel rays: substitute +-inf bands depending on origin being in-slab.
        par = np.abs(dirs) < 1e-15
        if par.any():
            in_slab = (origins >= lo[None, :]) & (origins <= hi[None, :])
            t_lo = np.where(par, np.where(in_slab, -np.inf, np.inf), t_lo)
            t_hi = np.where(par, np.where(in_slab, np.inf, -np.inf), t_hi)
        t_near = np.max(np.minimum(t_lo, t_hi), axis=1)
        t_far = np.min(np.maximum(t_lo, t_hi), axis=1)
        hit = (t_near <= t_far) & (t_far > _EPS)
        t = np.where(t_near > _EPS, t_near, t_far)
        return np.where(hit, t, np.inf)

    # -- surface parameterization ----------------------------------------

    def surface_coords(self, prim_index: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(face id, local u, local v) for hit points on one primitive."""
        prim = self.primitives[prim_index]
        if isinstance(prim, Rect):
            ua, va = prim.uv_axes
            face = np.zeros(len(points), dtype=np.int64)
            return face, points[:, ua] - prim.u_range[0], points[:, va] - prim.v_range[0]
        lo, hi = prim.bounds()
        # Nearest box face by coordinate proximity.
        d_lo = np.abs(points - lo[None, :])
        d_hi = np.abs(points - hi[None, :])
        both = np.concatenate([d_lo, d_hi], axis=1)  # faces 0..2 = min, 3..5 = max
        face = np.argmin(both, axis=1).astype(np.int64)
        axis = face % 3
        ua = np.where(axis == 0, 1, 0)
        va = np.where(axis == 2, 1, 2)
        idx = np.arange(len(points))
        u = points[idx, ua] - lo[ua]
        v = points[idx, va] - lo[va]
        return face, u, v

    def color_at(self, prim_index: int, points: np.ndarray) -> np.ndarray:
        prim = self.primitives[prim_index]
        color = prim.color
        if not isinstance(color, Checker):
            return np.tile(np.array(color, dtype=np.uint8), (len(points), 1))
        _, u, v = self.surface_coords(prim_index, points)
        parity = (np.floor(u / color.pitch) + np.floor(v / color.pitch)).astype(np.int64) & 1
        a = np.array(color.color_a, dtype=np.uint8)
        b = np.array(color.color_b, dtype=np.uint8)
        return np.where(parity[:, None] == 0, a[None, :], b[None, :])


def build_scene(spec: SceneSpec) -> Scene:
    """Construct an immutable scene from its declarative description."""
    return Scene(spec)


def render(scene: Scene, camera: Camera) -> RenderOutput:
    """Exact raycast render: RGB, camera-frame depth, and world point map."""
    W, H = camera.intrinsics.width, camera.intrinsics.height
    dirs, inv_z, origin = pixel_ray_grid(camera, W, H)
    flat_dirs = dirs.reshape(-1, 3)
    origins = np.broadcast_to(origin, flat_dirs.shape)
    t, prim = scene.intersect(origins, flat_dirs)
    valid = np.isfinite(t)
    depth = np.where(valid, t * inv_z.reshape(-1), np.inf).reshape(H, W)
    points = origin[None, :] + flat_dirs * np.where(valid, t, 0.0)[:, None]
    rgb = np.zeros((H * W, 3), dtype=np.uint8)
    for pi in np.unique(prim[valid]):
        mask = prim == pi
        rgb[mask] = scene.color_at(int(pi), points[mask])
    pm = PointMap(points.reshape(H, W, 3), valid.reshape(H, W))
    return RenderOutput(rgb.reshape(H, W, 3), depth, pm, camera)


def perturb_depth(out: RenderOutput, noise: NoiseParams, frame: int = 0) -> RenderOutput:
    """Apply multiplicative depth noise and dropout, rebuilding the point map.

    Deterministic for a given (noise.seed, frame): the same noisy output is
    produced on every call.
    """
    if not noise.enabled:
        return out
    rng = np.random.default_rng([noise.seed & 0x7FFFFFFF, frame])
    H, W = out.depth.shape
    valid = out.pointmap.valid.copy()
    depth = out.depth.copy()
    eps = rng.normal(0.0, 1.0, size=(H, W))
    if noise.depth_sigma_rel > 0:
        depth = np.where(valid, depth * (1.0 + noise.depth_sigma_rel * eps), depth)
    drop = rng.random((H, W))
    if noise.dropout_prob > 0:
        valid &= drop >= noise.dropout_prob
    valid &= depth > 0
    depth = np.where(valid, depth, np.inf)
    # Re-unproject along the original pixel rays so points stay on the rays.
    f = out.camera.intrinsics.focal
    cx, cy = out.camera.intrinsics.principal_point
    us = (np.arange(W) + 0.5 - cx) / f
    vs = (np.arange(H) + 0.5 - cy) / f
    uu, vv = np.meshgrid(us, vs)
    z = np.where(valid, depth, 1.0)
    cam_pts = np.stack([uu * z, vv * z, z], axis=-1)
    pts = out.camera.pose.camera_to_world(cam_pts.reshape(-1, 3)).reshape(H, W, 3)
    return RenderOutput(out.rgb, depth, PointMap(pts, valid), out.camera)


# -- visibility oracles ----------------------------------------------------


def visibility_oracle(scene: Scene, camera: Camera, grid: int = 64) -> np.ndarray:
    """Ground-truth visible-surface ids for a camera, as sorted unique int64.

    One ray per cell of a grid x grid image; each hit snaps to a lattice id
    (primitive, face, quantized local coords at scene_diagonal/256 pitch).
    """
    cam = Camera(camera.pose, camera.intrinsics.with_resolution(grid, grid))
    dirs, _, origin = pixel_ray_grid(cam, grid, grid)
    flat = dirs.reshape(-1, 3)
    t, prim = scene.intersect(np.broadcast_to(origin, flat.shape), flat)
    valid = np.isfinite(t)
    if not valid.any():
        return np.empty(0, dtype=np.int64)
    points = origin[None, :] + flat[valid] * t[valid][:, None]
    prim = prim[valid]
    ids = np.empty(len(points), dtype=np.int64)
    pitch = scene.sample_pitch
    for pi in np.unique(prim):
        mask = prim == pi
        face, u, v = scene.surface_coords(int(pi), points[mask])
        qi = np.floor(u / pitch).astype(np.int64)
        qj = np.floor(v / pitch).astype(np.int64)
        ids[mask] = (((int(pi) << 3) | face) << 40) | ((qi & 0xFFFFF) << 20) | (qj & 0xFFFFF)
    return np.unique(ids)


def coverage(target_visible: np.ndarray, observed: list[np.ndarray]) -> float:
    """Fraction of the target's visible surface covered by a union of view sets."""
    if len(target_visible) == 0:
        raise ValueError("blind target")
    if not observed:
        return 0.0
    union = np.unique(np.concatenate(observed))
    return len(np.intersect1d(target_visible, union, assume_unique=True)) / len(target_visible)


def relevance_oracle(
    scene: Scene,
    target_cam: Camera,
    past_cams: list[Camera],
    grid: int = 64,
) -> list[tuple[int, float]]:
    """Rank past cameras by shared visible surface with the target.

    Returns (index into past_cams, overlap score) sorted by descending score,
    ties broken toward the later camera.
    """
    vis_t = visibility_oracle(scene, target_cam, grid)
    if len(vis_t) == 0:
        raise ValueError("blind target")
    scores = []
    for i, cam in enumerate(past_cams):
        vis_i = visibility_oracle(scene, cam, grid)
        inter = np.intersect1d(vis_t, vis_i, assume_unique=True)
        scores.append((i, len(inter) / len(vis_t)))
    scores.sort(key=lambda s: (-s[1], -s[0]))
    return scores


# -- cameras and presets -----------------------------------------------------


def camera_at(
    position,
    yaw: float,
    pitch: float = 0.0,
    fov_deg: float = 60.0,
    width: int = 256,
    height: int = 256,
) -> Camera:
    """Level camera at `position` looking along yaw (radians, world x toward y).

    pitch > 0 tilts the view up. The world +z axis is up; the image y axis
    points down as usual.
    """
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cy * cp, sy * cp, sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=1)
    focal = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Camera(
        CameraPose(Quaternion.from_matrix(R), np.asarray(position, dtype=np.float64)),
        Intrinsics.centered(focal, width, height),
    )


def two_rooms_spec(seed: int = 0) -> SceneSpec:
    """Two 4x4x3 rooms sharing a wall with a 1-wide, 2-tall doorway.

    Footprint x in [0, 8], y in [0, 4], z in [0, 3]; the shared wall sits at
    x = 4 with the doorway spanning y in [1.5, 2.5]. Eleven rectangles total:
    nine walls plus floor and ceiling.
    """
    wall_a = (196, 120, 90)
    wall_b = (90, 130, 196)
    prims = (
        # room A shell
        Rect(0, 0.0, (0.0, 4.0), (0.0, 3.0), wall_a),
        Rect(1, 0.0, (0.0, 4.0), (0.0, 3.0), wall_a),
        Rect(1, 4.0, (0.0, 4.0), (0.0, 3.0), wall_a),
        # room B shell
        Rect(0, 8.0, (0.0, 4.0), (0.0, 3.0), wall_b),
        Rect(1, 0.0, (4.0, 8.0), (0.0, 3.0), wall_b),
        Rect(1, 4.0, (4.0, 8.0), (0.0, 3.0), wall_b),
        # shared dividing wall with doorway: two jambs plus a header
        Rect(0, 4.0, (0.0, 1.5), (0.0, 3.0), (150, 150, 150)),
        Rect(0, 4.0, (2.5, 4.0), (0.0, 3.0), (150, 150, 150)),
        Rect(0, 4.0, (1.5, 2.5), (2.0, 3.0), (150, 150, 150)),
        # floor and ceiling
        Rect(2, 0.0, (0.0, 8.0), (0.0, 4.0), Checker((70, 70, 70), (170, 170, 170), 1.0)),
        Rect(2, 3.0, (0.0, 8.0), (0.0, 4.0), (230, 230, 230)),
    )
    return SceneSpec(seed=seed, primitives=prims)


def corridor_loop_spec(seed: int = 0) -> SceneSpec:
    """Rectangular loop corridor: 10x10 shell around a solid 6x6 core, height 3."""
    outer = (180, 150, 110)
    prims = (
        Rect(0, 0.0, (0.0, 10.0), (0.0, 3.0), outer),
        Rect(0, 10.0, (0.0, 10.0), (0.0, 3.0), outer),
        Rect(1, 0.0, (0.0, 10.0), (0.0, 3.0), outer),
        Rect(1, 10.0, (0.0, 10.0), (0.0, 3.0), outer),
        Box((2.0, 2.0, 0.0), (8.0, 8.0, 3.0), Checker((120, 60, 60), (60, 60, 120), 1.0)),
        Rect(2, 0.0, (0.0, 10.0), (0.0, 10.0), Checker((70, 70, 70), (170, 170, 170), 1.0)),
        Rect(2, 3.0, (0.0, 10.0), (0.0, 10.0), (230, 230, 230)),
    )
    return SceneSpec(seed=seed, primitives=prims)


PRESETS = {
    "two_rooms": two_rooms_spec,
    "corridor_loop": corridor_loop_spec,
}


def preset_scene(name: str, seed: int = 0) -> Scene:
    if name not in PRESETS:
        raise ValueError(f"unknown scene preset: {name!r}")
    return build_scene(PRESETS[name](seed))
