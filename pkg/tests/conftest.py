import numpy as np
import pytest

from surfelmem.geometry import Camera, CameraPose, Intrinsics, Quaternion


def random_quaternion(rng: np.random.Generator) -> Quaternion:
    v = rng.normal(size=4)
    return Quaternion.from_array(v / np.linalg.norm(v))


def random_pose(rng: np.random.Generator, scale: float = 5.0) -> CameraPose:
    return CameraPose(random_quaternion(rng), rng.uniform(-scale, scale, size=3))


def random_camera(rng: np.random.Generator, width: int = 64, height: int = 64) -> Camera:
    focal = rng.uniform(0.5, 2.0) * width
    return Camera(random_pose(rng), Intrinsics.centered(focal, width, height))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
