"""HTTP service exposing surfel view memories as sessions.

Each memory is an isolated session addressed by id; calls on one session are
serialized by a per-session lock, and distinct sessions are independent. The
payload semantics match the in-process API exactly: the service is a thin
shell over the core package.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import persist
from ..geometry import Camera, CameraPose, Intrinsics, Quaternion
from ..retrieval import RetrievalConfig, retrieve
from ..store import MergeConfig, SurfelStore, View
from .schemas import (
    ArrayError,
    ArrayPayload,
    CreateRequest,
    IntrinsicsModel,
    MemoryInfo,
    MergeConfigModel,
    PathRequest,
    PoseModel,
    ReadRequest,
    ReadResponse,
    RetrievalConfigModel,
    RetrievedView,
    WriteRequest,
    WriteResponse,
)

app = FastAPI(title="surfelmem", version="0.1.0")

_sessions: dict[str, tuple[SurfelStore, threading.Lock]] = {}
_registry_lock = threading.Lock()


def _get_session(memory_id: str) -> tuple[SurfelStore, threading.Lock]:
    with _registry_lock:
        session = _sessions.get(memory_id)
    if session is None:
        raise HTTPException(status_code=404, detail=f"use after close or unknown memory: {memory_id}")
    return session


def _register(store: SurfelStore) -> str:
    memory_id = uuid.uuid4().hex
    with _registry_lock:
        _sessions[memory_id] = (store, threading.Lock())
    return memory_id


def _pose_from_model(p: PoseModel) -> CameraPose:
    try:
        return CameraPose(Quaternion.from_array(p.quaternion), np.asarray(p.translation))
    except ValueError as e:
        raise HTTPException(status_code=422, detail=f"pose: {e}") from e


def _intrinsics_from_model(i: IntrinsicsModel) -> Intrinsics:
    pp = i.principal_point if i.principal_point is not None else [i.width / 2.0, i.height / 2.0]
    try:
        return Intrinsics(i.focal, np.asarray(pp), i.width, i.height)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=f"intrinsics: {e}") from e


def _pose_to_model(pose: CameraPose) -> PoseModel:
    q = pose.rotation
    return PoseModel(
        quaternion=[q.w, q.x, q.y, q.z],
        translation=pose.translation.tolist(),
    )


def _info(memory_id: str, store: SurfelStore) -> MemoryInfo:
    rc = store.retrieval_config or RetrievalConfig()
    return MemoryInfo(
        memory_id=memory_id,
        surfel_count=store.surfel_count,
        view_count=len(store.views),
        retained_frames=store.retained_frames(),
        next_frame=store.next_frame,
        merge=MergeConfigModel(**vars(store.merge_config)),
        retrieval=RetrievalConfigModel(**vars(rc)),
        scene_diagonal=store.scene_diagonal,
    )


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/memories", response_model=MemoryInfo)
def create_memory(req: CreateRequest) -> MemoryInfo:
    try:
        merge = MergeConfig(**req.merge.model_dump())
        retrieval = RetrievalConfig(**req.retrieval.model_dump())
        store = SurfelStore(merge, scene_diagonal=req.scene_diagonal)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    store.retrieval_config = retrieval
    return _info(_register(store), store)


@app.get("/memories/{memory_id}", response_model=MemoryInfo)
def memory_info(memory_id: str) -> MemoryInfo:
    store, _ = _get_session(memory_id)
    return _info(memory_id, store)


@app.delete("/memories/{memory_id}")
def close_memory(memory_id: str) -> dict:
    with _registry_lock:
        if memory_id not in _sessions:
            raise HTTPException(status_code=404, detail=f"use after close or unknown memory: {memory_id}")
        del _sessions[memory_id]
    return {"closed": memory_id}


@app.post("/memories/{memory_id}/write", response_model=WriteResponse)
def write_views(memory_id: str, req: WriteRequest) -> WriteResponse:
    store, lock = _get_session(memory_id)
    try:
        frames = req.frames.decode("frames", expect_ndim=4)
        pointmaps = req.pointmaps.decode("pointmaps", expect_ndim=4)
        masks = req.valid_masks.decode("valid_masks", expect_ndim=3)
    except ArrayError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    if frames.dtype != np.uint8 or frames.shape[-1] != 3:
        raise HTTPException(status_code=422, detail="frames: expected uint8 with shape (M, H, W, 3)")
    if pointmaps.dtype != np.float64 or pointmaps.shape[-1] != 3:
        raise HTTPException(status_code=422, detail="pointmaps: expected float64 with shape (M, H, W, 3)")
    m = frames.shape[0]
    if len(req.poses) != m:
        raise HTTPException(
            status_code=422, detail=f"poses: expected {m} poses to match frames, got {len(req.poses)}"
        )
    if pointmaps.shape[:3] != frames.shape[:3]:
        raise HTTPException(
            status_code=422,
            detail=f"pointmaps: shape {list(pointmaps.shape)} does not match frames {list(frames.shape)}",
        )
    if masks.shape != frames.shape[:3]:
        raise HTTPException(
            status_code=422,
            detail=f"valid_masks: shape {list(masks.shape)} does not match frames {list(frames.shape[:3])}",
        )
    intr = _intrinsics_from_model(req.intrinsics)
    if m and (frames.shape[2], frames.shape[1]) != (intr.width, intr.height):
        raise HTTPException(
            status_code=422,
            detail=f"intrinsics: width/height ({intr.width}, {intr.height}) do not match "
            f"frame shape ({frames.shape[2]}, {frames.shape[1]})",
        )
    for i in range(m):
        bad = ~np.isfinite(pointmaps[i]).all(axis=-1) & masks[i]
        if bad.any():
            v, u = np.argwhere(bad)[0]
            raise HTTPException(
                status_code=422,
                detail=f"pointmaps[{i}]: non-finite value at pixel ({int(v)}, {int(u)}) inside valid mask",
            )
    with lock:
        if m == 0:
            return WriteResponse(
                frames_written=[],
                surfels_added=0,
                surfels_merged=0,
                views_discarded=[],
                surfel_count=store.surfel_count,
            )
        start = store.next_frame
        views, pms = [], []
        from ..geometry import PointMap

        for i in range(m):
            cam = Camera(_pose_from_model(req.poses[i]), intr)
            views.append(View(start + i, frames[i], cam))
            pms.append(PointMap(pointmaps[i], masks[i]))
        try:
            report = store.write_views(views, pms)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        return WriteResponse(
            frames_written=[v.frame_index for v in views],
            surfels_added=report.surfels_added,
            surfels_merged=report.surfels_merged,
            views_discarded=report.views_discarded,
            surfel_count=store.surfel_count,
        )


@app.post("/memories/{memory_id}/read", response_model=ReadResponse)
def read_memory(memory_id: str, req: ReadRequest) -> ReadResponse:
    store, lock = _get_session(memory_id)
    intr = _intrinsics_from_model(req.intrinsics)
    cams = [Camera(_pose_from_model(p), intr) for p in req.target_poses]
    cfg = store.retrieval_config or RetrievalConfig()
    with lock:
        try:
            views = retrieve(store, cams, cfg)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        out = [
            RetrievedView(
                frame_index=v.frame_index,
                pose=_pose_to_model(v.camera.pose),
                image=ArrayPayload.encode(v.image),
            )
            for v in views
        ]
    return ReadResponse(frame_indices=[v.frame_index for v in out], views=out)


@app.post("/memories/{memory_id}/save")
def save_memory(memory_id: str, req: PathRequest) -> dict:
    store, lock = _get_session(memory_id)
    with lock:
        try:
            persist.save_snapshot(store, req.path)
        except OSError as e:
            raise HTTPException(status_code=422, detail=f"path: {e}") from e
    return {"path": req.path}


@app.post("/memories/load", response_model=MemoryInfo)
def load_memory(req: PathRequest) -> MemoryInfo:
    try:
        store = persist.load_snapshot(req.path)
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=f"path: {e}") from e
    except (persist.SnapshotError, OSError) as e:
        raise HTTPException(status_code=422, detail=f"snapshot: {e}") from e
    return _info(_register(store), store)
