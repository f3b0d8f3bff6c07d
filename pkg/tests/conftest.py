import math
from typing import Callable

import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.strategies import composite

from app.geometry import Box3D, CameraModel


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def identity_camera() -> CameraModel:
    """Camera frame == ego frame: depth along ego z."""
    return CameraModel(name="cam", fx=100.0, fy=100.0, cx=0.0, cy=0.0, width=640, height=480)


@pytest.fixture
def origin_camera() -> CameraModel:
    """Level camera at the ego origin looking down +x."""
    return CameraModel.from_yaw("front", 0.0, (0.0, 0.0, 0.0), 1000.0, 1000.0, 1920, 1280)


def random_camera(rng: np.random.Generator, name: str = "cam") -> CameraModel:
    return CameraModel.from_yaw(
        name, float(rng.uniform(-math.pi, math.pi)), (1.5, 0.0, 1.6), 1200.0, 1200.0, 1920, 1280
    )


def random_box_in_view(rng: np.random.Generator, cam: CameraModel, depth=(8.0, 40.0)) -> Box3D:
    """Vehicle-sized box on the ground, fully in front of `cam`."""
    bearing = rng.uniform(-0.5, 0.5)
    d = rng.uniform(*depth)
    fwd = cam.R[2].copy()
    right = cam.R[0].copy()
    ray = math.cos(bearing) * fwd + math.sin(bearing) * right
    ray[2] = 0.0
    ray /= np.linalg.norm(ray)
    p = cam.center + d * ray
    l, w, h = rng.uniform(3.5, 5.5), rng.uniform(1.6, 2.2), rng.uniform(1.3, 2.0)
    return Box3D(float(p[0]), float(p[1]), h / 2.0, l, w, h, float(rng.uniform(-math.pi, math.pi)))


@composite
def boxes(draw: Callable, span: float = 10.0) -> Box3D:
    coord = st.floats(-span, span, allow_nan=False, allow_infinity=False)
    dim = st.floats(0.2, 6.0, allow_nan=False, allow_infinity=False)
    yaw = st.floats(-math.pi, math.pi, allow_nan=False, allow_infinity=False)
    return Box3D(draw(coord), draw(coord), draw(coord), draw(dim), draw(dim), draw(dim), draw(yaw))
