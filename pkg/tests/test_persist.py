import math

import numpy as np
import pytest

from surfelmem.harness import Trajectory
from surfelmem.persist import (
    SnapshotError,
    dump_frame,
    dump_id_image,
    frame_color,
    load_snapshot,
    load_trajectory,
    restore_bytes,
    save_snapshot,
    save_trajectory,
    scene_spec_from_json,
    scene_spec_to_json,
    snapshot_bytes,
    snapshot_to_json,
)
from surfelmem.raster import IdImage, rasterize_ids
from surfelmem.retrieval import RetrievalConfig
from surfelmem.store import MergeConfig, SurfelStore, View
from surfelmem.world import build_scene, camera_at, preset_scene, render, two_rooms_spec
from PIL import Image


def populated_store(n_views: int = 6, rng=None) -> SurfelStore:
    scene = preset_scene("two_rooms")
    store = SurfelStore(MergeConfig(), scene_diagonal=scene.diagonal)
    store.retrieval_config = RetrievalConfig(k=3)
    rng = rng or np.random.default_rng(0)
    for frame in range(1, n_views + 1):
        pos = (rng.uniform(0.8, 7.2), rng.uniform(0.8, 3.2), 1.5)
        cam = camera_at(pos, rng.uniform(0, 2 * math.pi), width=96, height=96)
        out = render(scene, cam)
        store.write_views([View(frame, out.rgb, cam)], [out.pointmap])
    return store


def assert_stores_equal(a: SurfelStore, b: SurfelStore):
    assert sorted(a.surfels) == sorted(b.surfels)
    for sid in a.surfels:
        sa, sb = a.surfels[sid], b.surfels[sid]
        assert np.array_equal(sa.position, sb.position)
        assert np.array_equal(sa.normal, sb.normal)
        assert sa.radius == sb.radius
        assert sa.view_indices == sb.view_indices
    assert sorted(a.views) == sorted(b.views)
    for f in a.views:
        va, vb = a.views[f], b.views[f]
        assert va.retained == vb.retained
        if va.retained:
            assert np.array_equal(va.image, vb.image)
        assert np.allclose(va.camera.pose.translation, vb.camera.pose.translation)
        assert np.allclose(va.camera.pose.matrix, vb.camera.pose.matrix)
    assert a.next_frame == b.next_frame
    assert a.scene_diagonal == b.scene_diagonal


class TestSnapshotRoundTrip:
    def test_empty_store(self, tmp_path):
        store = SurfelStore()
        p = str(tmp_path / "empty.vmem")
        save_snapshot(store, p)
        loaded = load_snapshot(p)
        assert loaded.surfel_count == 0 and loaded.views == {}

    def test_populated_round_trip(self, tmp_path, rng):
        store = populated_store(8, rng)
        p = str(tmp_path / "mem.vmem")
        save_snapshot(store, p)
        loaded = load_snapshot(p)
        assert_stores_equal(store, loaded)
        assert loaded.octree_matches_list()
        for _ in range(50):
            center = rng.uniform(0, 8, 3)
            radius = rng.uniform(0, 3)
            assert store.radius_query(center, radius) == loaded.radius_query(center, radius)

    def test_preserves_configs(self, tmp_path):
        store = SurfelStore(MergeConfig(sigma=0.05, alpha=0.3), scene_diagonal=7.5)
        store.retrieval_config = RetrievalConfig(k=9, strategy="fov")
        p = str(tmp_path / "cfg.vmem")
        save_snapshot(store, p)
        loaded = load_snapshot(p)
        assert loaded.merge_config.sigma == 0.05
        assert loaded.merge_config.alpha == 0.3
        assert loaded.retrieval_config.k == 9
        assert loaded.retrieval_config.strategy == "fov"
        assert loaded.scene_diagonal == 7.5

    def test_tombstones_survive(self, tmp_path):
        store = populated_store(4)
        cam = store.views[4].camera
        out_img = store.views[4].image
        scene = preset_scene("two_rooms")
        rendered = render(scene, cam)
        store.write_views([View(9, rendered.rgb, cam)], [rendered.pointmap])
        assert not store.views[4].retained  # NMS tombstone
        p = str(tmp_path / "tomb.vmem")
        save_snapshot(store, p)
        loaded = load_snapshot(p)
        assert not loaded.views[4].retained
        assert loaded.retained_frames() == store.retained_frames()
        del out_img


class TestSnapshotErrors:
    def test_bad_magic(self):
        data = bytearray(snapshot_bytes(SurfelStore()))
        data[:4] = b"XMEM"
        with pytest.raises(SnapshotError, match="bad snapshot header"):
            restore_bytes(bytes(data))

    def test_version_mismatch(self):
        data = bytearray(snapshot_bytes(SurfelStore()))
        data[4:6] = (99).to_bytes(2, "little")
        with pytest.raises(SnapshotError, match="unsupported snapshot version"):
            restore_bytes(bytes(data))

    def test_truncation_names_section(self):
        import struct

        data = snapshot_bytes(populated_store(3))
        config_end = 10 + struct.unpack("<I", data[6:10])[0]
        with pytest.raises(SnapshotError, match="truncated in surfel array"):
            restore_bytes(data[: config_end + 12])
        with pytest.raises(SnapshotError, match="truncated in view table"):
            restore_bytes(data[:-10])

    def test_trailing_garbage(self):
        data = snapshot_bytes(SurfelStore())
        with pytest.raises(SnapshotError, match="trailing bytes"):
            restore_bytes(data + b"\x00")

    def test_corrupt_surfel_invariant(self):
        store = SurfelStore()
        from surfelmem.store import Surfel

        store.insert_or_merge(Surfel(np.zeros(3), np.array([0, 0, 1.0]), 0.5, [1]))
        cam = camera_at((0, 0, 0), 0.0, width=8, height=8)
        store.views[1] = View(1, np.zeros((8, 8, 3), np.uint8), cam)
        data = bytearray(snapshot_bytes(store))
        # Zero the normal: find its f64s right after the varint id and position.
        import struct

        blob_len = struct.unpack("<I", data[6:10])[0]
        base = 10 + blob_len + 8 + 1  # counts + surfel id varint (single byte)
        data[base + 24 : base + 48] = struct.pack("<3d", 0.0, 0.0, 0.0)
        with pytest.raises(SnapshotError, match="surfel record 0"):
            restore_bytes(bytes(data))

    def test_unknown_view_reference(self):
        store = SurfelStore()
        from surfelmem.store import Surfel

        store.insert_or_merge(Surfel(np.zeros(3), np.array([0, 0, 1.0]), 0.5, [7]))
        with pytest.raises(SnapshotError, match="unknown frame 7"):
            restore_bytes(snapshot_bytes(store))


class TestDebugImages:
    def test_empty_id_image_black(self, tmp_path):
        img = IdImage(np.full((8, 8), -1, np.int64), np.full((8, 8), np.inf))
        p = str(tmp_path / "empty.png")
        dump_id_image(img, p, SurfelStore())
        arr = np.asarray(Image.open(p))
        assert (arr == 0).all()

    def test_byte_identical_dumps(self, tmp_path):
        store = populated_store(3)
        cam = camera_at((2.0, 2.0, 1.5), 0.0)
        img = rasterize_ids(store, cam, (32, 32))
        p1, p2 = str(tmp_path / "a.png"), str(tmp_path / "b.png")
        dump_id_image(img, p1, store)
        dump_id_image(img, p2, store)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_two_frames_three_colors(self, tmp_path):
        from surfelmem.store import MergeConfig, Surfel

        store = SurfelStore(MergeConfig(normal_cos_threshold=1.0))
        cam = camera_at((0, 0, 0), 0.0, width=32, height=32)
        store.views[1] = View(1, np.zeros((32, 32, 3), np.uint8), cam)
        store.views[2] = View(2, np.zeros((32, 32, 3), np.uint8), camera_at((5, 0, 0), 1.0, width=32, height=32))
        fwd = cam.pose.matrix[:, 2]
        store.insert_or_merge(Surfel(cam.pose.translation + 2 * fwd + np.array([0, 0.4, 0]), -fwd, 0.3, [1]))
        store.insert_or_merge(Surfel(cam.pose.translation + 2 * fwd - np.array([0, 0.4, 0]), -fwd, 0.3, [2]))
        img = rasterize_ids(store, cam, (32, 32))
        p = str(tmp_path / "two.png")
        dump_id_image(img, p, store)
        arr = np.asarray(Image.open(p))
        colors = {tuple(c) for c in arr.reshape(-1, 3)}
        assert colors == {(0, 0, 0), frame_color(1), frame_color(2)}

    def test_dump_frame_round_trip(self, tmp_path, rng):
        rgb = rng.integers(0, 255, size=(16, 16, 3), dtype=np.uint8)
        p = str(tmp_path / "frame.png")
        dump_frame(rgb, p)
        assert np.array_equal(np.asarray(Image.open(p)), rgb)


class TestSceneTrajectoryJson:
    def test_scene_round_trip(self):
        spec = two_rooms_spec(3)
        back = scene_spec_from_json(scene_spec_to_json(spec))
        assert back == spec
        assert abs(build_scene(back).diagonal - build_scene(spec).diagonal) < 1e-12

    def test_trajectory_round_trip(self, tmp_path):
        cams = [camera_at((i * 0.5, 2.0, 1.5), 0.1 * i, width=64, height=48) for i in range(5)]
        traj = Trajectory(cams, 3, "demo")
        p = str(tmp_path / "traj.json")
        save_trajectory(traj, p)
        back = load_trajectory(p)
        assert back.step_size == 3 and back.name == "demo"
        assert len(back) == 5
        for a, b in zip(traj.cameras, back.cameras):
            assert np.allclose(a.pose.matrix, b.pose.matrix, atol=1e-12)
            assert np.allclose(a.pose.translation, b.pose.translation)
            assert a.intrinsics.focal == b.intrinsics.focal
            assert (a.intrinsics.width, a.intrinsics.height) == (b.intrinsics.width, b.intrinsics.height)

    def test_snapshot_to_json_summary(self):
        store = populated_store(3)
        dump = snapshot_to_json(store)
        assert dump["surfel_count"] == store.surfel_count
        assert len(dump["surfels"]) == store.surfel_count
        assert [v["frame"] for v in dump["views"]] == sorted(store.views)
