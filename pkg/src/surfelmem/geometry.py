"""Camera models, rotation math, and point-map primitives.

Conventions, fixed once for the whole package:
  - camera-to-world extrinsics, right-handed, +z forward in camera frame
  - pixel origin at the top-left corner, pixel centers at integer + 0.5
  - quaternions ordered (w, x, y, z), kept unit-norm
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-9


class DegenerateNormalError(ValueError):
    """Raised when a surface normal cannot be estimated at a pixel."""


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z). q and -q encode the same rotation."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < _UNIT_TOL:
            raise ValueError("zero-norm quaternion")
        if abs(n - 1.0) > _UNIT_TOL:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle_rad: float) -> "Quaternion":
        a = np.asarray(axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        h = 0.5 * angle_rad
        s = math.sin(h)
        return Quaternion(math.cos(h), a[0] * s, a[1] * s, a[2] * s)

    @staticmethod
    def from_array(q) -> "Quaternion":
        w, x, y, z = (float(v) for v in q)
        return Quaternion(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def to_matrix(self) -> np.ndarray:
        """3x3 rotation matrix for this quaternion."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    @staticmethod
    def from_matrix(R) -> "Quaternion":
        """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
        R = np.asarray(R, dtype=np.float64)
        t = R[0, 0] + R[1, 1] + R[2, 2]
        if t > 0:
            s = 0.5 / math.sqrt(t + 1.0)
            w = 0.25 / s
            x = (R[2, 1] - R[1, 2]) * s
            y = (R[0, 2] - R[2, 0]) * s
            z = (R[1, 0] - R[0, 1]) * s
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            w = (R[2, 1] - R[1, 2]) / s
            x = 0.25 * s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            w = (R[0, 2] - R[2, 0]) / s
            x = (R[0, 1] + R[1, 0]) / s
            y = 0.25 * s
            z = (R[1, 2] + R[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            w = (R[1, 0] - R[0, 1]) / s
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
            z = 0.25 * s
        return Quaternion(w, x, y, z)


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform: rotation plus camera center."""

    rotation: Quaternion
    translation: np.ndarray  # camera center in world units, shape (3,)
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "_matrix", self.rotation.to_matrix())

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(Quaternion.identity(), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """Cached 3x3 camera-to-world rotation matrix."""
        return self._matrix

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (…,3) into the camera frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self._matrix

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame points (…,3) into the world frame."""
        return np.asarray(points, dtype=np.float64) @ self._matrix.T + self.translation


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics with a single focal length (fx = fy), in pixels."""

    focal: float
    principal_point: np.ndarray  # (cx, cy)
    width: int
    height: int

    def __post_init__(self):
        pp = np.asarray(self.principal_point, dtype=np.float64).reshape(2)
        object.__setattr__(self, "principal_point", pp)
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not (0 <= pp[0] <= self.width and 0 <= pp[1] <= self.height):
            raise ValueError("principal point outside image bounds")

    @staticmethod
    def centered(focal: float, width: int, height: int) -> "Intrinsics":
        return Intrinsics(focal, np.array([width / 2.0, height / 2.0]), width, height)

    def with_resolution(self, width: int, height: int) -> "Intrinsics":
        """Rescale to a new pixel resolution, preserving the field of view in x."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            self.focal * sx,
            np.array([self.principal_point[0] * sx, self.principal_point[1] * sy]),
            width,
            height,
        )


@dataclass(frozen=True)
class Camera:
    pose: CameraPose
    intrinsics: Intrinsics


@dataclass
class PointMap:
    """Per-pixel 3D world points with a validity mask. Invalid entries hold garbage."""

    points: np.ndarray  # (H, W, 3) float64
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError("points must have shape (H, W, 3)")
        if self.valid.shape != self.points.shape[:2]:
            raise ValueError("valid mask shape mismatch")
        if self.valid.any() and not np.all(np.isfinite(self.points[self.valid])):
            raise ValueError("non-finite point inside valid region")

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


def average_pose(poses: list[CameraPose]) -> CameraPose:
    """Mean pose: arithmetic mean of centers, normalized hemisphere-aligned quaternion sum.

    Each quaternion is sign-flipped onto the first pose's hemisphere
    (q_m -> -q_m when q_m . q_1 < 0) before summing.
    """
    if len(poses) == 0:
        raise ValueError("empty pose set")
    q1 = poses[0].rotation.as_array()
    acc = np.zeros(4)
    for p in poses:
        q = p.rotation.as_array()
        if float(q @ q1) < 0.0:
            q = -q
        acc += q
    n = float(np.linalg.norm(acc))
    if n < 1e-9:
        raise ValueError("antipodal rotation set")
    t = np.mean([p.translation for p in poses], axis=0)
    return CameraPose(Quaternion.from_array(acc / n), t)


def rotation_distance(r_a, r_b) -> float:
    """Angle in radians between two rotations, from the trace of R_a R_b^T."""
    Ra = r_a.to_matrix() if isinstance(r_a, Quaternion) else np.asarray(r_a)
    Rb = r_b.to_matrix() if isinstance(r_b, Quaternion) else np.asarray(r_b)
    c = 0.5 * (np.trace(Ra @ Rb.T) - 1.0)
    return float(math.acos(min(1.0, max(-1.0, c))))


def translation_distance(t_a, t_b) -> float:
    """Euclidean distance between two camera centers."""
    return float(np.linalg.norm(np.asarray(t_a, dtype=np.float64) - np.asarray(t_b, dtype=np.float64)))


def compute_normal(pm: PointMap, u: int, v: int, camera_center) -> np.ndarray:
    """Unit surface normal at pixel (u, v) from central differences, facing the camera.

    u indexes columns, v indexes rows; all four neighbors must be valid.
    """
    H, W = pm.height, pm.width
    if not (1 <= u < W - 1 and 1 <= v < H - 1):
        raise DegenerateNormalError("degenerate normal: pixel has no interior neighborhood")
    val = pm.valid
    if not (val[v, u + 1] and val[v, u - 1] and val[v + 1, u] and val[v - 1, u] and val[v, u]):
        raise DegenerateNormalError("degenerate normal: invalid neighbor")
    du = pm.points[v, u + 1] - pm.points[v, u - 1]
    dv = pm.points[v + 1, u] - pm.points[v - 1, u]
    n = np.cross(du, dv)
    norm = float(np.linalg.norm(n))
    if norm < 1e-12:
        raise DegenerateNormalError("degenerate normal: collinear neighborhood")
    n = n / norm
    to_cam = np.asarray(camera_center, dtype=np.float64) - pm.points[v, u]
    if float(n @ to_cam) < 0.0:
        n = -n
    return n


def compute_radius(
    depth: float,
    focal: float,
    normal,
    point,
    camera_center,
    alpha: float,
) -> float:
    """Surfel radius: grows with depth, shrinks with focal length and grazing angle.

    The angular term interpolates between 1 (face-on) and alpha (edge-on) using
    the normalized viewing direction, so the result lies in
    [depth/(2 focal), depth/(2 focal alpha)].
    """
    if depth <= 0 or focal <= 0:
        raise ValueError("invalid geometry input: depth and focal must be positive")
    if not (0 < alpha <= 1):
        raise ValueError("invalid geometry input: alpha must be in (0, 1]")
    d = np.asarray(point, dtype=np.float64) - np.asarray(camera_center, dtype=np.float64)
    dn = float(np.linalg.norm(d))
    if dn < 1e-12:
        raise ValueError("invalid geometry input: point coincides with camera center")
    cos_term = abs(float(np.asarray(normal, dtype=np.float64) @ d) / dn)
    return (0.5 * depth / focal) / (alpha + (1.0 - alpha) * cos_term)


def downsample_pointmap(pm: PointMap, sigma: float) -> PointMap:
    """Shrink a point map to round(H * sigma) x round(W * sigma), floor 3x3.

    Pure nearest-pixel subsampling: no averaging, so no phantom points appear
    across depth discontinuities. The 3x3 floor keeps at least one interior
    pixel available for normal estimation.
    """
    if not (0 < sigma <= 1):
        raise ValueError("sigma must be in (0, 1]")
    H, W = pm.height, pm.width
    Hd = max(3, int(round(H * sigma)))
    Wd = max(3, int(round(W * sigma)))
    rows = np.minimum((((np.arange(Hd) + 0.5) * H / Hd)).astype(np.int64), H - 1)
    cols = np.minimum((((np.arange(Wd) + 0.5) * W / Wd)).astype(np.int64), W - 1)
    return PointMap(pm.points[np.ix_(rows, cols)], pm.valid[np.ix_(rows, cols)])


def project(camera: Camera, point) -> tuple[np.ndarray, float] | None:
    """Project a world point to (pixel, depth); None when at or behind the camera."""
    pc = camera.pose.world_to_camera(np.asarray(point, dtype=np.float64))
    z = float(pc[2])
    if z <= 1e-9:
        return None
    f = camera.intrinsics.focal
    cx, cy = camera.intrinsics.principal_point
    return np.array([f * pc[0] / z + cx, f * pc[1] / z + cy]), z


def ray_through_pixel(camera: Camera, pixel) -> tuple[np.ndarray, np.ndarray]:
    """World ray (origin, unit direction) through a continuous pixel position."""
    px, py = float(pixel[0]), float(pixel[1])
    f = camera.intrinsics.focal
    cx, cy = camera.intrinsics.principal_point
    d_cam = np.array([(px - cx) / f, (py - cy) / f, 1.0])
    d = camera.pose.matrix @ d_cam
    return camera.pose.translation.copy(), d / np.linalg.norm(d)


def pixel_ray_grid(camera: Camera, width: int, height: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rays through all pixel centers of a width x height grid.

    Returns (directions (H, W, 3) unit world vectors, inv_z (H, W), origin).
    inv_z converts a Euclidean ray parameter t into camera-frame depth
    (Z = t * inv_z) and back (t = Z / inv_z).
    """
    f = camera.intrinsics.focal
    cx, cy = camera.intrinsics.principal_point
    us = (np.arange(width) + 0.5 - cx) / f
    vs = (np.arange(height) + 0.5 - cy) / f
    uu, vv = np.meshgrid(us, vs)
    d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    norms = np.linalg.norm(d_cam, axis=-1)
    d_world = d_cam @ camera.pose.matrix.T
    d_world /= norms[..., None]
    return d_world, 1.0 / norms, camera.pose.translation.copy()


def unproject_depth(camera: Camera, depth: np.ndarray, valid: np.ndarray) -> PointMap:
    """Camera-frame depth image (H, W) back to a world-frame point map."""
    H, W = depth.shape
    f = camera.intrinsics.focal
    cx, cy = camera.intrinsics.principal_point
    us = (np.arange(W) + 0.5 - cx) / f
    vs = (np.arange(H) + 0.5 - cy) / f
    uu, vv = np.meshgrid(us, vs)
    z = np.where(valid, depth, 1.0)
    pc = np.stack([uu * z, vv * z, z], axis=-1)
    pts = camera.pose.camera_to_world(pc.reshape(-1, 3)).reshape(H, W, 3)
    return PointMap(pts, valid.copy())


def camera_depth(camera: Camera, points: np.ndarray) -> np.ndarray:
    """Camera-frame z for world points of shape (..., 3)."""
    return camera.pose.world_to_camera(points)[..., 2]


def pose_similar(
    a: CameraPose,
    b: CameraPose,
    rot_deg: float,
    trans: float,
) -> bool:
    """Whether two poses fall within both a rotation and a translation threshold."""
    if translation_distance(a.translation, b.translation) >= trans:
        return False
    return rotation_distance(a.rotation, b.rotation) < math.radians(rot_deg)
