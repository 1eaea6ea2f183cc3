import math

import numpy as np
import pytest

from surfelmem.geometry import pose_similar
from surfelmem.raster import IdImage, rasterize_ids
from surfelmem.retrieval import (
    RetrievalConfig,
    baseline_camera_distance,
    baseline_fov,
    baseline_temporal,
    read_memory,
    retrieve,
    vote_topk,
)
from surfelmem.store import MergeConfig, Surfel, SurfelStore, View
from surfelmem.world import camera_at, preset_scene, render


def dummy_view(frame: int, pos, yaw: float, size: int = 32) -> View:
    cam = camera_at(pos, yaw, width=size, height=size)
    img = np.full((size, size, 3), frame % 251, np.uint8)
    return View(frame, img, cam)


def store_with_views(views: list[View], diagonal: float = 10.0) -> SurfelStore:
    store = SurfelStore(MergeConfig(normal_cos_threshold=1.0), scene_diagonal=diagonal)
    for v in views:
        store.views[v.frame_index] = v
        store.next_frame = max(store.next_frame, v.frame_index + 1)
    return store


def add_surfel(store: SurfelStore, pos, frames) -> int:
    _, sid = store.insert_or_merge(Surfel(np.asarray(pos, float), np.array([0, 0, 1.0]), 0.05, list(frames)))
    return sid


def id_image_of(counts: dict[int, int], width: int = 16) -> IdImage:
    """IdImage whose pixels reference surfel ids with the given multiplicities."""
    total = width * width
    ids = np.full(total, -1, dtype=np.int64)
    pos = 0
    for sid, n in counts.items():
        ids[pos : pos + n] = sid
        pos += n
    depth = np.where(ids >= 0, 1.0, np.inf)
    return IdImage(ids.reshape(width, width), depth.reshape(width, width))


class TestVoteTopK:
    def test_frequency_ranking(self):
        views = [dummy_view(1, (0, 0, 0), 0.0), dummy_view(3, (5, 0, 0), 2.0)]
        store = store_with_views(views)
        s1 = add_surfel(store, (0, 0, 1), [3])
        s2 = add_surfel(store, (1, 0, 1), [1])
        img = id_image_of({s1: 10, s2: 4})
        assert vote_topk(img, store, 2, RetrievalConfig(k=2)) == [3, 1]

    def test_tie_breaks_to_newer(self):
        views = [dummy_view(1, (0, 0, 0), 0.0), dummy_view(2, (5, 0, 0), 2.0)]
        store = store_with_views(views)
        s1 = add_surfel(store, (0, 0, 1), [1])
        s2 = add_surfel(store, (1, 0, 1), [2])
        img = id_image_of({s1: 6, s2: 6})
        assert vote_topk(img, store, 2, RetrievalConfig(k=2)) == [2, 1]

    def test_nms_drops_pose_similar(self):
        views = [
            dummy_view(5, (0, 0, 0), 0.0),
            dummy_view(4, (0.01, 0, 0), 0.001),  # nearly identical pose to frame 5
            dummy_view(1, (8, 0, 0), 3.0),
        ]
        store = store_with_views(views)
        s5 = add_surfel(store, (0, 0, 1), [5])
        s4 = add_surfel(store, (1, 0, 1), [4])
        s1 = add_surfel(store, (2, 0, 1), [1])
        img = id_image_of({s5: 10, s4: 9, s1: 3})
        assert vote_topk(img, store, 2, RetrievalConfig(k=2)) == [5, 1]

    def test_empty_image(self):
        store = store_with_views([dummy_view(1, (0, 0, 0), 0.0)])
        img = id_image_of({})
        assert vote_topk(img, store, 3, RetrievalConfig(k=3)) == []

    def test_matches_independent_reimplementation(self, rng):
        # Brute-force reference: count, sort by (-count, -frame), greedy NMS.
        views = [dummy_view(f, rng.uniform(0, 6, 3), rng.uniform(0, 6.3)) for f in range(1, 11)]
        store = store_with_views(views)
        sids = []
        for _ in range(30):
            frames = rng.choice(np.arange(1, 11), size=rng.integers(1, 4), replace=False)
            sids.append(add_surfel(store, rng.uniform(0, 6, 3), sorted(int(f) for f in frames)))
        cfg = RetrievalConfig(k=4)
        for _ in range(20):
            multiplicity = {sid: int(rng.integers(0, 12)) for sid in sids}
            multiplicity = {s: n for s, n in multiplicity.items() if n}
            if sum(multiplicity.values()) > 24 * 24:
                continue
            img = id_image_of(multiplicity, width=24)

            counts: dict[int, int] = {}
            for sid, n in multiplicity.items():
                for t in store.surfels[sid].view_indices:
                    counts[t] = counts.get(t, 0) + n
            order = sorted(counts, key=lambda t: (-counts[t], -t))
            expect: list[int] = []
            for t in order:
                if len(expect) == cfg.k:
                    break
                if any(
                    pose_similar(
                        store.views[t].camera.pose,
                        store.views[j].camera.pose,
                        cfg.nms_rot_deg,
                        cfg.nms_trans * store.scene_diagonal,
                    )
                    for j in expect
                ):
                    continue
                expect.append(t)
            assert vote_topk(img, store, cfg.k, cfg) == expect


def write_rendered_view(store: SurfelStore, scene, frame: int, pos, yaw: float, size: int = 256):
    cam = camera_at(pos, yaw, width=size, height=size)
    out = render(scene, cam)
    store.write_views([View(frame, out.rgb, cam)], [out.pointmap])
    return cam


class TestReadMemory:
    def test_single_view_memory_returns_it(self):
        scene = preset_scene("two_rooms")
        store = SurfelStore(scene_diagonal=scene.diagonal)
        cam = write_rendered_view(store, scene, 1, (2.0, 2.0, 1.5), math.pi)
        got = read_memory(store, [camera_at((2.5, 1.0, 1.5), 2.0)], RetrievalConfig(k=4))
        assert [v.frame_index for v in got] == [1]

    def test_self_retrieval_ranks_first(self):
        scene = preset_scene("two_rooms")
        store = SurfelStore(scene_diagonal=scene.diagonal)
        cam_a = write_rendered_view(store, scene, 1, (2.0, 2.0, 1.5), math.pi)
        write_rendered_view(store, scene, 2, (6.0, 2.0, 1.5), 0.0)
        got = read_memory(store, [cam_a], RetrievalConfig(k=1))
        assert [v.frame_index for v in got] == [1]

    def test_occluded_room_ranks_below(self):
        scene = preset_scene("two_rooms")
        store = SurfelStore(scene_diagonal=scene.diagonal)
        write_rendered_view(store, scene, 1, (2.0, 2.0, 1.5), math.pi)  # room A
        write_rendered_view(store, scene, 2, (6.0, 2.0, 1.5), 0.0)  # room B
        target = camera_at((1.0, 2.0, 1.5), math.pi)  # deep in A, facing A's far wall
        got = read_memory(store, [target], RetrievalConfig(k=2))
        assert got[0].frame_index == 1

    def test_empty_surfel_store_returns_recent(self):
        store = store_with_views([dummy_view(f, (f, 0, 0), 0.1 * f) for f in (1, 2, 3)])
        got = read_memory(store, [camera_at((0, 0, 0), 0.0)], RetrievalConfig(k=2))
        assert [v.frame_index for v in got] == [3, 2]

    def test_fill_when_fewer_than_k(self):
        scene = preset_scene("two_rooms")
        store = SurfelStore(scene_diagonal=scene.diagonal)
        write_rendered_view(store, scene, 1, (2.0, 2.0, 1.5), math.pi)
        write_rendered_view(store, scene, 2, (6.0, 2.0, 1.5), 0.0)
        # Target sees room A only, but k exceeds the memory: both views return.
        target = camera_at((1.0, 2.0, 1.5), math.pi)
        got = read_memory(store, [target], RetrievalConfig(k=4))
        assert [v.frame_index for v in got] == [1, 2]

    def test_result_no_pose_similar_pair_and_k_cap(self, rng):
        scene = preset_scene("two_rooms")
        cfg = RetrievalConfig(k=3)
        store = SurfelStore(scene_diagonal=scene.diagonal)
        frame = 1
        for _ in range(8):
            pos = (rng.uniform(0.8, 7.2), rng.uniform(0.8, 3.2), 1.5)
            write_rendered_view(store, scene, frame, pos, rng.uniform(0, 2 * math.pi), size=128)
            frame = store.next_frame
        targets = [camera_at((rng.uniform(1, 7), rng.uniform(1, 3), 1.5), rng.uniform(0, 6.3))]
        got = read_memory(store, targets, cfg)
        assert len(got) <= cfg.k
        for i, a in enumerate(got):
            for b in got[i + 1 :]:
                assert not pose_similar(
                    a.camera.pose, b.camera.pose, cfg.nms_rot_deg, cfg.nms_trans * store.scene_diagonal
                )

    def test_deterministic(self):
        scene = preset_scene("two_rooms")
        results = []
        for _ in range(2):
            store = SurfelStore(scene_diagonal=scene.diagonal)
            write_rendered_view(store, scene, 1, (2.0, 2.0, 1.5), math.pi)
            write_rendered_view(store, scene, 2, (6.0, 2.0, 1.5), 0.0)
            write_rendered_view(store, scene, 3, (3.0, 2.0, 1.5), 0.5)
            got = read_memory(store, [camera_at((2.5, 2.0, 1.5), 1.0)], RetrievalConfig(k=2))
            results.append([v.frame_index for v in got])
        assert results[0] == results[1]


class TestBaselines:
    def _store_line(self, n=10):
        return store_with_views([dummy_view(f, (f * 1.0, 0, 0), 0.0) for f in range(1, n + 1)])

    def test_temporal(self):
        store = self._store_line(10)
        got = baseline_temporal(store, [camera_at((0, 0, 0), 0.0)], 4)
        assert [v.frame_index for v in got] == [10, 9, 8, 7]

    def test_temporal_exhausts(self):
        store = self._store_line(3)
        got = baseline_temporal(store, [camera_at((0, 0, 0), 0.0)], 10)
        assert [v.frame_index for v in got] == [3, 2, 1]

    def test_camera_distance_nearest(self):
        store = self._store_line(5)
        got = baseline_camera_distance(store, [camera_at((1.2, 0, 0), 0.0)], 2)
        assert [v.frame_index for v in got] == [1, 2]

    def test_camera_distance_ties_by_recency(self):
        views = [dummy_view(f, (math.cos(f), math.sin(f), 0), 0.0) for f in (1, 2, 3)]
        store = store_with_views(views)
        got = baseline_camera_distance(store, [camera_at((0, 0, 0), 0.0)], 2)
        assert [v.frame_index for v in got] == [3, 2]

    def test_camera_distance_ignores_occlusion(self):
        # Wall-occluded nearer view outranks a visible farther one by construction.
        store = store_with_views(
            [dummy_view(1, (0.9, 2.0, 1.5), math.pi), dummy_view(2, (4.4, 2.0, 1.5), 0.0)],
            diagonal=9.434,
        )
        target = camera_at((3.9, 2.0, 1.5), math.pi)
        got = baseline_camera_distance(store, [target], 1)
        assert got[0].frame_index == 2  # the across-the-wall camera

    def test_fov_identical_pose_first(self):
        target = camera_at((2.0, 2.0, 1.5), 0.3, width=32, height=32)
        views = [
            View(1, np.zeros((32, 32, 3), np.uint8), target),
            dummy_view(2, (2.0, 2.0, 1.5), 0.3 + math.pi),
        ]
        store = store_with_views(views)
        got = baseline_fov(store, [target], 2)
        assert got[0].frame_index == 1

    def test_fov_opposite_direction_zero(self):
        target = camera_at((2.0, 2.0, 1.5), 0.0, width=32, height=32)
        store = store_with_views([dummy_view(1, (2.0, 2.0, 1.5), math.pi)])
        got = baseline_fov(store, [target], 1)
        # Still returned (only candidate), but from a zero score.
        assert [v.frame_index for v in got] == [1]

    def test_retrieve_dispatch(self):
        store = self._store_line(6)
        cams = [camera_at((3.0, 0, 0), 0.0)]
        assert [v.frame_index for v in retrieve(store, cams, RetrievalConfig(k=2, strategy="temporal"))] == [6, 5]
        got = retrieve(store, cams, RetrievalConfig(k=2, strategy="camera_distance"))
        assert [v.frame_index for v in got] == [3, 4]

    def test_bad_strategy_rejected(self):
        with pytest.raises(ValueError, match="unknown strategy"):
            RetrievalConfig(strategy="nope")
