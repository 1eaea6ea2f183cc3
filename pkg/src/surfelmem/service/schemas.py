"""Request/response models and the binary array wire codec.

Arrays travel as base64 raw bytes (C order, little-endian) with explicit dtype
and shape, so float64 payloads survive the boundary bit-for-bit and NaN is
representable (and detectable server-side).
"""

from __future__ import annotations

import base64
import math

import numpy as np
from pydantic import BaseModel, Field

_DTYPES = {
    "uint8": np.dtype("|u1"),
    "float64": np.dtype("<f8"),
    "bool": np.dtype("|b1"),
}


class ArrayError(ValueError):
    """Array payload inconsistent with its declared dtype/shape."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ArrayPayload(BaseModel):
    dtype: str
    shape: list[int]
    data: str  # base64 of raw C-order bytes

    @staticmethod
    def encode(arr: np.ndarray) -> "ArrayPayload":
        if arr.dtype == np.uint8:
            name = "uint8"
        elif arr.dtype == np.float64:
            name = "float64"
        elif arr.dtype == np.bool_:
            name = "bool"
        else:
            raise ArrayError("array", f"unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[name], copy=False).tobytes()
        return ArrayPayload(dtype=name, shape=list(arr.shape), data=base64.b64encode(raw).decode())

    def decode(self, field: str, expect_ndim: int | None = None) -> np.ndarray:
        if self.dtype not in _DTYPES:
            raise ArrayError(field, f"unsupported dtype {self.dtype!r}")
        if any(s < 0 for s in self.shape):
            raise ArrayError(field, f"negative dimension in shape {self.shape}")
        if expect_ndim is not None and len(self.shape) != expect_ndim:
            raise ArrayError(field, f"expected {expect_ndim} dimensions, got shape {self.shape}")
        try:
            raw = base64.b64decode(self.data, validate=True)
        except Exception as e:
            raise ArrayError(field, f"invalid base64 payload: {e}") from e
        dt = _DTYPES[self.dtype]
        n = math.prod(self.shape)
        if len(raw) != n * dt.itemsize:
            raise ArrayError(
                field, f"payload holds {len(raw)} bytes but shape {self.shape} needs {n * dt.itemsize}"
            )
        return np.frombuffer(raw, dtype=dt).reshape(self.shape).copy()


class PoseModel(BaseModel):
    quaternion: list[float] = Field(min_length=4, max_length=4)  # w x y z
    translation: list[float] = Field(min_length=3, max_length=3)


class IntrinsicsModel(BaseModel):
    focal: float
    width: int
    height: int
    principal_point: list[float] | None = None


class MergeConfigModel(BaseModel):
    merge_distance_scale: float = 1.0
    normal_cos_threshold: float = 0.866
    view_nms_rot_deg: float = 15.0
    view_nms_trans: float = 0.05
    sigma: float = 0.03
    alpha: float = 0.2


class RetrievalConfigModel(BaseModel):
    k: int = 4
    render_width: int = 128
    render_height: int = 128
    nms_rot_deg: float = 15.0
    nms_trans: float = 0.05
    strategy: str = "vmem"


class CreateRequest(BaseModel):
    merge: MergeConfigModel = MergeConfigModel()
    retrieval: RetrievalConfigModel = RetrievalConfigModel()
    scene_diagonal: float = 1.0


class MemoryInfo(BaseModel):
    memory_id: str
    surfel_count: int
    view_count: int
    retained_frames: list[int]
    next_frame: int
    merge: MergeConfigModel
    retrieval: RetrievalConfigModel
    scene_diagonal: float


class WriteRequest(BaseModel):
    frames: ArrayPayload  # (M, H, W, 3) uint8
    poses: list[PoseModel]
    intrinsics: IntrinsicsModel
    pointmaps: ArrayPayload  # (M, H, W, 3) float64
    valid_masks: ArrayPayload  # (M, H, W) bool


class WriteResponse(BaseModel):
    frames_written: list[int]
    surfels_added: int
    surfels_merged: int
    views_discarded: list[int]
    surfel_count: int


class ReadRequest(BaseModel):
    target_poses: list[PoseModel] = Field(min_length=1)
    intrinsics: IntrinsicsModel


class RetrievedView(BaseModel):
    frame_index: int
    pose: PoseModel
    image: ArrayPayload


class ReadResponse(BaseModel):
    frame_indices: list[int]
    views: list[RetrievedView]


class PathRequest(BaseModel):
    path: str
