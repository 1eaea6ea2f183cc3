import numpy as np
import pytest

from surfelmem.octree import Octree


def linear_scan(points: np.ndarray, center, radius: float) -> list[int]:
    d = np.linalg.norm(points - np.asarray(center), axis=1)
    return sorted(np.flatnonzero(d <= radius).tolist())


def test_empty_tree():
    t = Octree()
    assert t.query_radius((0, 0, 0), 10.0) == []
    assert len(t) == 0


def test_single_point_exact():
    t = Octree()
    t.insert(7, (1.0, 2.0, 3.0))
    assert t.query_radius((1.0, 2.0, 3.0), 0.0) == [7]
    assert t.query_radius((1.0, 2.0, 3.1), 0.05) == []


def test_matches_linear_scan_random(rng):
    pts = rng.uniform(-50, 50, size=(1000, 3))
    t = Octree()
    for i, p in enumerate(pts):
        t.insert(i, p)
    for _ in range(100):
        center = rng.uniform(-60, 60, size=3)
        radius = rng.uniform(0, 40)
        assert t.query_radius(center, radius) == linear_scan(pts, center, radius)


def test_growth_by_rerooting(rng):
    # Points spread over wildly different magnitudes force repeated regrowth.
    t = Octree(initial_half=0.5)
    pts = []
    for i in range(200):
        p = rng.normal(size=3) * (10.0 ** rng.integers(-2, 4))
        pts.append(p)
        t.insert(i, p)
    pts = np.array(pts)
    for _ in range(50):
        center = pts[rng.integers(len(pts))]
        radius = rng.uniform(0, 100)
        assert t.query_radius(center, radius) == linear_scan(pts, center, radius)


def test_coincident_points():
    t = Octree()
    for i in range(100):  # more than one leaf's worth at an identical position
        t.insert(i, (1.0, 1.0, 1.0))
    assert t.query_radius((1, 1, 1), 0.0) == list(range(100))


def test_remove(rng):
    pts = rng.uniform(-5, 5, size=(300, 3))
    t = Octree()
    for i, p in enumerate(pts):
        t.insert(i, p)
    removed = set(rng.choice(300, size=120, replace=False).tolist())
    for i in removed:
        t.remove(i, pts[i])
    assert len(t) == 180
    keep = np.array([i for i in range(300) if i not in removed])
    for _ in range(40):
        center = rng.uniform(-6, 6, size=3)
        radius = rng.uniform(0, 5)
        expect = [i for i in linear_scan(pts, center, radius) if i not in removed]
        assert t.query_radius(center, radius) == expect
    assert t.all_ids() == sorted(keep.tolist())


def test_remove_missing_raises():
    t = Octree()
    t.insert(1, (0, 0, 0))
    with pytest.raises(KeyError):
        t.remove(2, (0, 0, 0))


def test_negative_radius_rejected():
    t = Octree()
    with pytest.raises(ValueError):
        t.query_radius((0, 0, 0), -1.0)
