"""File formats: binary memory snapshots, debug images, scene and trajectory JSON.

Snapshot layout (little-endian throughout):
  magic "VMEM" | version u16 | config JSON (u32 length + UTF-8)
  | surfel count u64 | per surfel: id delta varint, p/n (6 f64), r (f64),
    index count varint, first index varint, gap varints
  | view count u64 | per view: frame u32, quaternion wxyz + translation (7 f64),
    focal/cx/cy (3 f64), width u32, height u32, flags u8, [png u32 len + bytes]

Unknown versions and malformed payloads fail closed; nothing is best-effort.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct

import numpy as np
from PIL import Image

from .geometry import Camera, CameraPose, Intrinsics, Quaternion
from .harness import Trajectory
from .raster import IdImage
from .retrieval import RetrievalConfig
from .store import MergeConfig, Surfel, SurfelStore, View
from .world import Box, Checker, Rect, Scene, SceneSpec, build_scene, PRESETS

MAGIC = b"VMEM"
VERSION = 1


class SnapshotError(Exception):
    """Malformed, truncated, or incompatible snapshot payload."""


# -- varint helpers ----------------------------------------------------------


def _put_varint(buf: bytearray, v: int) -> None:
    if v < 0:
        raise ValueError("varints are unsigned")
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            buf.append(b | 0x80)
        else:
            buf.append(b)
            return


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.section = "header"

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError(f"snapshot truncated in {self.section}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64s(self, n: int) -> tuple:
        return struct.unpack(f"<{n}d", self.take(8 * n))

    def varint(self) -> int:
        shift = 0
        out = 0
        while True:
            b = self.u8()
            out |= (b & 0x7F) << shift
            if not b & 0x80:
                return out
            shift += 7
            if shift > 63:
                raise SnapshotError(f"varint overflow in {self.section}")


# -- snapshot ----------------------------------------------------------------


def _encode_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)


def snapshot_bytes(store: SurfelStore) -> bytes:
    cfg: dict = {
        "merge": {
            "merge_distance_scale": store.merge_config.merge_distance_scale,
            "normal_cos_threshold": store.merge_config.normal_cos_threshold,
            "view_nms_rot_deg": store.merge_config.view_nms_rot_deg,
            "view_nms_trans": store.merge_config.view_nms_trans,
            "sigma": store.merge_config.sigma,
            "alpha": store.merge_config.alpha,
        },
        "retrieval": None,
        "scene_diagonal": store.scene_diagonal,
        "next_frame": store.next_frame,
    }
    rc = store.retrieval_config
    if rc is not None:
        cfg["retrieval"] = {
            "k": rc.k,
            "render_width": rc.render_width,
            "render_height": rc.render_height,
            "nms_rot_deg": rc.nms_rot_deg,
            "nms_trans": rc.nms_trans,
            "strategy": rc.strategy,
        }
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(blob))
    out += blob

    out += struct.pack("<Q", len(store.surfels))
    prev_id = 0
    for sid in sorted(store.surfels):
        s = store.surfels[sid]
        _put_varint(out, sid - prev_id)
        prev_id = sid
        out += struct.pack("<7d", *s.position, *s.normal, s.radius)
        _put_varint(out, len(s.view_indices))
        prev = 0
        for t in s.view_indices:
            _put_varint(out, t - prev)
            prev = t

    out += struct.pack("<Q", len(store.views))
    for frame in sorted(store.views):
        v = store.views[frame]
        q = v.camera.pose.rotation
        t = v.camera.pose.translation
        i = v.camera.intrinsics
        out += struct.pack("<I", frame)
        out += struct.pack("<7d", q.w, q.x, q.y, q.z, t[0], t[1], t[2])
        out += struct.pack("<3d", i.focal, i.principal_point[0], i.principal_point[1])
        out += struct.pack("<II", i.width, i.height)
        if v.image is None:
            out += struct.pack("<B", 0)
        else:
            png = _encode_png(v.image)
            out += struct.pack("<B", 1)
            out += struct.pack("<I", len(png))
            out += png
    return bytes(out)


def restore_bytes(data: bytes) -> SurfelStore:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise SnapshotError("bad snapshot header")
    version = r.u16()
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version: {version}")
    r.section = "config"
    blob = r.take(r.u32())
    try:
        cfg = json.loads(blob.decode("utf-8"))
        merge = MergeConfig(**cfg["merge"])
    except (ValueError, KeyError, TypeError) as e:
        raise SnapshotError(f"invalid config block: {e}") from e
    store = SurfelStore(merge, scene_diagonal=cfg.get("scene_diagonal", 1.0))
    if cfg.get("retrieval"):
        store.retrieval_config = RetrievalConfig(**cfg["retrieval"])
    store.next_frame = int(cfg.get("next_frame", 1))

    r.section = "surfel array"
    count = r.u64()
    sid = 0
    max_id = -1
    for rec in range(count):
        sid += r.varint()
        vals = r.f64s(7)
        n_idx = r.varint()
        if n_idx == 0:
            raise SnapshotError(f"surfel record {rec}: empty view-index set")
        idx = []
        t = 0
        for _ in range(n_idx):
            t += r.varint()
            idx.append(t)
        try:
            surfel = Surfel(np.array(vals[0:3]), np.array(vals[3:6]), vals[6], idx)
        except ValueError as e:
            raise SnapshotError(f"surfel record {rec}: {e}") from e
        if sid in store.surfels:
            raise SnapshotError(f"surfel record {rec}: duplicate id {sid}")
        store.surfels[sid] = surfel
        store._octree.insert(sid, surfel.position)
        max_id = sid
    store._next_surfel_id = max_id + 1

    r.section = "view table"
    count = r.u64()
    for rec in range(count):
        frame = r.u32()
        qw, qx, qy, qz, tx, ty, tz = r.f64s(7)
        focal, cx, cy = r.f64s(3)
        width, height = r.u32(), r.u32()
        flags = r.u8()
        image = None
        if flags & 1:
            image = _decode_png(r.take(r.u32()))
        try:
            cam = Camera(
                CameraPose(Quaternion(qw, qx, qy, qz), np.array([tx, ty, tz])),
                Intrinsics(focal, np.array([cx, cy]), width, height),
            )
            view = View(frame, image, cam)
        except ValueError as e:
            raise SnapshotError(f"view record {rec}: {e}") from e
        if frame in store.views:
            raise SnapshotError(f"view record {rec}: duplicate frame {frame}")
        store.views[frame] = view
        store.next_frame = max(store.next_frame, frame + 1)

    if r.pos != len(data):
        raise SnapshotError("trailing bytes after view table")
    for sid, s in store.surfels.items():
        for t in s.view_indices:
            if t not in store.views:
                raise SnapshotError(f"surfel {sid} references unknown frame {t}")
    return store


def save_snapshot(store: SurfelStore, path: str) -> None:
    """Write a snapshot atomically (temp file + rename)."""
    data = snapshot_bytes(store)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_snapshot(path: str) -> SurfelStore:
    with open(path, "rb") as f:
        return restore_bytes(f.read())


def snapshot_to_json(store: SurfelStore) -> dict:
    """Debug-friendly JSON view of a store (images elided to byte sizes)."""
    return {
        "surfel_count": store.surfel_count,
        "view_count": len(store.views),
        "retained_frames": store.retained_frames(),
        "next_frame": store.next_frame,
        "scene_diagonal": store.scene_diagonal,
        "surfels": [
            {
                "id": sid,
                "position": store.surfels[sid].position.tolist(),
                "normal": store.surfels[sid].normal.tolist(),
                "radius": store.surfels[sid].radius,
                "view_indices": store.surfels[sid].view_indices,
            }
            for sid in sorted(store.surfels)
        ],
        "views": [
            {
                "frame": f,
                "retained": store.views[f].retained,
                "translation": store.views[f].camera.pose.translation.tolist(),
                "quaternion": [
                    store.views[f].camera.pose.rotation.w,
                    store.views[f].camera.pose.rotation.x,
                    store.views[f].camera.pose.rotation.y,
                    store.views[f].camera.pose.rotation.z,
                ],
            }
            for f in sorted(store.views)
        ],
    }


# -- debug images ------------------------------------------------------------


def frame_color(frame: int) -> tuple[int, int, int]:
    """Stable, hash-derived bright color for a frame index."""
    h = hashlib.sha256(str(frame).encode()).digest()
    return tuple(48 + (b % 208) for b in h[:3])


def dump_id_image(id_image: IdImage, path: str, store: SurfelStore) -> None:
    """False-color PNG: each pixel colored by the newest view observing its surfel."""
    H, W = id_image.ids.shape
    rgb = np.zeros((H, W, 3), dtype=np.uint8)
    palette: dict[int, tuple[int, int, int]] = {}
    ids = id_image.ids
    for sid in np.unique(ids[ids >= 0]):
        frame = store.surfels[int(sid)].view_indices[-1]
        if frame not in palette:
            palette[frame] = frame_color(frame)
        rgb[ids == sid] = palette[frame]
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def dump_frame(rgb: np.ndarray, path: str) -> None:
    """Lossless PNG dump of an RGB frame."""
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


# -- scene and trajectory JSON ------------------------------------------------


def _color_to_json(color) -> dict | list:
    if isinstance(color, Checker):
        return {
            "checker": [list(color.color_a), list(color.color_b)],
            "pitch": color.pitch,
        }
    return list(color)


def _color_from_json(obj):
    if isinstance(obj, dict):
        a, b = obj["checker"]
        return Checker(tuple(a), tuple(b), obj.get("pitch", 0.5))
    return tuple(obj)


def scene_spec_to_json(spec: SceneSpec) -> dict:
    prims = []
    for p in spec.primitives:
        if isinstance(p, Rect):
            prims.append(
                {
                    "kind": "rect",
                    "axis": p.axis,
                    "offset": p.offset,
                    "u_range": list(p.u_range),
                    "v_range": list(p.v_range),
                    "color": _color_to_json(p.color),
                }
            )
        elif isinstance(p, Box):
            prims.append(
                {
                    "kind": "box",
                    "min": list(p.min_corner),
                    "max": list(p.max_corner),
                    "color": _color_to_json(p.color),
                }
            )
        else:
            raise ValueError(f"unknown primitive type: {type(p).__name__}")
    out = {"seed": spec.seed, "primitives": prims}
    if spec.diagonal is not None:
        out["diagonal"] = spec.diagonal
    return out


def scene_spec_from_json(obj: dict) -> SceneSpec:
    prims = []
    for p in obj.get("primitives", []):
        color = _color_from_json(p.get("color", [200, 200, 200]))
        if p.get("kind") == "rect":
            prims.append(
                Rect(p["axis"], p["offset"], tuple(p["u_range"]), tuple(p["v_range"]), color)
            )
        elif p.get("kind") == "box":
            prims.append(Box(tuple(p["min"]), tuple(p["max"]), color))
        else:
            raise ValueError(f"unknown primitive kind: {p.get('kind')!r}")
    return SceneSpec(seed=obj.get("seed", 0), primitives=tuple(prims), diagonal=obj.get("diagonal"))


def load_scene(name_or_path: str, seed: int = 0) -> Scene:
    """Scene from a preset name or a JSON file path."""
    if name_or_path in PRESETS:
        return build_scene(PRESETS[name_or_path](seed))
    with open(name_or_path) as f:
        return build_scene(scene_spec_from_json(json.load(f)))


def trajectory_to_json(traj: Trajectory) -> dict:
    cams = []
    for c in traj.cameras:
        q = c.pose.rotation
        cams.append(
            {
                "quaternion": [q.w, q.x, q.y, q.z],
                "translation": c.pose.translation.tolist(),
                "focal": c.intrinsics.focal,
                "principal_point": c.intrinsics.principal_point.tolist(),
                "width": c.intrinsics.width,
                "height": c.intrinsics.height,
            }
        )
    return {"name": traj.name, "step_size": traj.step_size, "cameras": cams}


def trajectory_from_json(obj: dict) -> Trajectory:
    cams = []
    for c in obj["cameras"]:
        intr_args = (c["focal"], c["width"], c["height"])
        if "principal_point" in c:
            intr = Intrinsics(c["focal"], np.asarray(c["principal_point"]), c["width"], c["height"])
        else:
            intr = Intrinsics.centered(*intr_args)
        cams.append(
            Camera(
                CameraPose(Quaternion.from_array(c["quaternion"]), np.asarray(c["translation"])),
                intr,
            )
        )
    return Trajectory(cams, obj.get("step_size", 4), obj.get("name", ""))


def save_trajectory(traj: Trajectory, path: str) -> None:
    with open(path, "w") as f:
        json.dump(trajectory_to_json(traj), f, sort_keys=True, indent=2)


def load_trajectory(path: str) -> Trajectory:
    with open(path) as f:
        return trajectory_from_json(json.load(f))
