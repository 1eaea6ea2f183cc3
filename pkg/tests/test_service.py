import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from surfelmem.geometry import PointMap
from surfelmem.retrieval import RetrievalConfig, retrieve
from surfelmem.service.app import app, _sessions
from surfelmem.service.schemas import ArrayPayload
from surfelmem.store import MergeConfig, SurfelStore, View
from surfelmem.world import camera_at, preset_scene, render


@pytest.fixture
def client():
    _sessions.clear()
    return TestClient(app)


def enc(arr: np.ndarray) -> dict:
    return ArrayPayload.encode(np.asarray(arr)).model_dump()


def pose_of(cam) -> dict:
    q = cam.pose.rotation
    return {
        "quaternion": [q.w, q.x, q.y, q.z],
        "translation": cam.pose.translation.tolist(),
    }


def intr_of(cam) -> dict:
    return {
        "focal": cam.intrinsics.focal,
        "width": cam.intrinsics.width,
        "height": cam.intrinsics.height,
        "principal_point": cam.intrinsics.principal_point.tolist(),
    }


def rendered_batch(scene, cams):
    outs = [render(scene, c) for c in cams]
    frames = np.stack([o.rgb for o in outs])
    pms = np.stack([o.pointmap.points for o in outs])
    masks = np.stack([o.pointmap.valid for o in outs])
    return frames, pms, masks


def make_memory(client, scene, **overrides) -> str:
    body = {"scene_diagonal": scene.diagonal}
    body.update(overrides)
    r = client.post("/memories", json=body)
    assert r.status_code == 200, r.text
    return r.json()["memory_id"]


class TestCreate:
    def test_defaults(self, client):
        r = client.post("/memories", json={})
        assert r.status_code == 200
        info = r.json()
        assert info["surfel_count"] == 0
        assert info["retrieval"]["k"] == 4
        assert info["merge"]["sigma"] == 0.03

    def test_invalid_sigma_names_field(self, client):
        r = client.post("/memories", json={"merge": {"sigma": 0.0}})
        assert r.status_code == 422
        assert "sigma" in r.text

    def test_k17_echo(self, client):
        r = client.post("/memories", json={"retrieval": {"k": 17}})
        assert r.status_code == 200
        assert r.json()["retrieval"]["k"] == 17


class TestWrite:
    def test_write_matches_native(self, client):
        scene = preset_scene("two_rooms")
        cams = [
            camera_at((2.0, 2.0, 1.5), 0.0, width=64, height=64),
            camera_at((2.5, 2.0, 1.5), 0.4, width=64, height=64),
        ]
        frames, pms, masks = rendered_batch(scene, cams)

        native = SurfelStore(MergeConfig(), scene_diagonal=scene.diagonal)
        native.write_views(
            [View(i + 1, frames[i], cams[i]) for i in range(2)],
            [PointMap(pms[i], masks[i]) for i in range(2)],
        )

        mid = make_memory(client, scene)
        r = client.post(
            f"/memories/{mid}/write",
            json={
                "frames": enc(frames),
                "poses": [pose_of(c) for c in cams],
                "intrinsics": intr_of(cams[0]),
                "pointmaps": enc(pms),
                "valid_masks": enc(masks),
            },
        )
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["frames_written"] == [1, 2]
        assert body["surfel_count"] == native.surfel_count

    def test_empty_batch_noop(self, client):
        scene = preset_scene("two_rooms")
        mid = make_memory(client, scene)
        r = client.post(
            f"/memories/{mid}/write",
            json={
                "frames": enc(np.zeros((0, 8, 8, 3), np.uint8)),
                "poses": [],
                "intrinsics": {"focal": 10.0, "width": 8, "height": 8},
                "pointmaps": enc(np.zeros((0, 8, 8, 3))),
                "valid_masks": enc(np.zeros((0, 8, 8), bool)),
            },
        )
        assert r.status_code == 200
        assert r.json()["surfel_count"] == 0

    def test_nan_names_pixel(self, client):
        scene = preset_scene("two_rooms")
        cam = camera_at((2.0, 2.0, 1.5), 0.0, width=16, height=16)
        frames, pms, masks = rendered_batch(scene, [cam])
        pms[0, 5, 7, 1] = np.nan
        mid = make_memory(client, scene)
        r = client.post(
            f"/memories/{mid}/write",
            json={
                "frames": enc(frames),
                "poses": [pose_of(cam)],
                "intrinsics": intr_of(cam),
                "pointmaps": enc(pms),
                "valid_masks": enc(masks),
            },
        )
        assert r.status_code == 422
        assert "pointmaps[0]" in r.text and "(5, 7)" in r.text

    def test_shape_mismatch_names_field(self, client):
        scene = preset_scene("two_rooms")
        cam = camera_at((2.0, 2.0, 1.5), 0.0, width=16, height=16)
        frames, pms, masks = rendered_batch(scene, [cam])
        mid = make_memory(client, scene)
        r = client.post(
            f"/memories/{mid}/write",
            json={
                "frames": enc(frames),
                "poses": [pose_of(cam)],
                "intrinsics": intr_of(cam),
                "pointmaps": enc(pms[:, :8]),  # wrong H
                "valid_masks": enc(masks),
            },
        )
        assert r.status_code == 422
        assert "pointmaps" in r.text

    def test_payload_length_mismatch(self, client):
        scene = preset_scene("two_rooms")
        mid = make_memory(client, scene)
        bad = enc(np.zeros((1, 4, 4, 3), np.uint8))
        bad["shape"] = [1, 8, 8, 3]
        r = client.post(
            f"/memories/{mid}/write",
            json={
                "frames": bad,
                "poses": [{"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0]}],
                "intrinsics": {"focal": 10.0, "width": 8, "height": 8},
                "pointmaps": enc(np.zeros((1, 8, 8, 3))),
                "valid_masks": enc(np.zeros((1, 8, 8), bool)),
            },
        )
        assert r.status_code == 422
        assert "frames" in r.text


class TestRead:
    def _write(self, client, mid, scene, cams, start=0):
        frames, pms, masks = rendered_batch(scene, cams)
        r = client.post(
            f"/memories/{mid}/write",
            json={
                "frames": enc(frames),
                "poses": [pose_of(c) for c in cams],
                "intrinsics": intr_of(cams[0]),
                "pointmaps": enc(pms),
                "valid_masks": enc(masks),
            },
        )
        assert r.status_code == 200, r.text

    def test_single_view_memory(self, client):
        scene = preset_scene("two_rooms")
        cam = camera_at((2.0, 2.0, 1.5), math.pi, width=64, height=64)
        mid = make_memory(client, scene)
        self._write(client, mid, scene, [cam])
        r = client.post(
            f"/memories/{mid}/read",
            json={"target_poses": [pose_of(camera_at((2.5, 1.5, 1.5), 2.0))], "intrinsics": intr_of(cam)},
        )
        assert r.status_code == 200
        assert r.json()["frame_indices"] == [1]

    def test_read_matches_native(self, client):
        scene = preset_scene("two_rooms")
        rng = np.random.default_rng(3)
        cams = [
            camera_at(
                (rng.uniform(0.8, 7.2), rng.uniform(0.8, 3.2), 1.5),
                rng.uniform(0, 2 * math.pi),
                width=64,
                height=64,
            )
            for _ in range(6)
        ]
        native = SurfelStore(MergeConfig(), scene_diagonal=scene.diagonal)
        native.retrieval_config = RetrievalConfig(k=3)
        mid = make_memory(client, scene, retrieval={"k": 3})
        for i, cam in enumerate(cams):
            out = render(scene, cam)
            native.write_views([View(native.next_frame, out.rgb, cam)], [out.pointmap])
            self._write(client, mid, scene, [cam])
        target = camera_at((3.0, 2.0, 1.5), 0.3, width=64, height=64)
        expect = retrieve(native, [target], native.retrieval_config)
        r = client.post(
            f"/memories/{mid}/read",
            json={"target_poses": [pose_of(target)], "intrinsics": intr_of(target)},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["frame_indices"] == [v.frame_index for v in expect]
        for rv, ev in zip(body["views"], expect):
            img = ArrayPayload(**rv["image"]).decode("image")
            assert np.array_equal(img, ev.image)
            assert np.allclose(rv["pose"]["translation"], ev.camera.pose.translation)

    def test_use_after_close(self, client):
        scene = preset_scene("two_rooms")
        mid = make_memory(client, scene)
        assert client.delete(f"/memories/{mid}").status_code == 200
        r = client.post(
            f"/memories/{mid}/read",
            json={
                "target_poses": [{"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0]}],
                "intrinsics": {"focal": 10.0, "width": 8, "height": 8},
            },
        )
        assert r.status_code == 404
        assert "use after close" in r.text


class TestSaveLoad:
    def test_round_trip(self, client, tmp_path):
        scene = preset_scene("two_rooms")
        cam = camera_at((2.0, 2.0, 1.5), 0.0, width=64, height=64)
        mid = make_memory(client, scene)
        TestRead._write(TestRead(), client, mid, scene, [cam])
        info_before = client.get(f"/memories/{mid}").json()
        path = str(tmp_path / "svc.vmem")
        assert client.post(f"/memories/{mid}/save", json={"path": path}).status_code == 200
        r = client.post("/memories/load", json={"path": path})
        assert r.status_code == 200
        info_after = r.json()
        assert info_after["surfel_count"] == info_before["surfel_count"]
        assert info_after["retained_frames"] == info_before["retained_frames"]

    def test_load_missing_404(self, client):
        assert client.post("/memories/load", json={"path": "/nope.vmem"}).status_code == 404
