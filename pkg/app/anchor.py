# app/anchor.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from .errors import InvalidCategory, OutOfRange, ProjectionDegenerate, SensorInsideFootprint
from .geometry import Box3D, CameraModel, project_point

logger = logging.getLogger(__name__)

UP = (0.0, 0.0, 1.0)
DOWN = (0.0, 0.0, -1.0)

PARAM_LOW = 0.0
PARAM_HIGH = 2.0


class ViewKind(str, Enum):
    FRONT = "front"
    CORNER = "corner"


# visible face set (+x, +y, -x, -y) -> category index, counterclockwise from +x
_FACES_TO_INDEX = {
    (True, False, False, False): 0,
    (True, True, False, False): 1,
    (False, True, False, False): 2,
    (False, True, True, False): 3,
    (False, False, True, False): 4,
    (False, False, True, True): 5,
    (False, False, False, True): 6,
    (True, False, False, True): 7,
}

# corner categories -> box-frame signs of the shared vertical edge
_CORNER_SIGNS = {1: (1, 1), 3: (-1, 1), 5: (-1, -1), 7: (1, -1)}
# front categories -> (axis, sign) of the visible face
_FACE_AXIS = {0: (0, 1), 2: (1, 1), 4: (0, -1), 6: (1, -1)}


@dataclass(frozen=True)
class ViewCategory:
    index: int

    def __post_init__(self):
        if not 0 <= int(self.index) <= 7:
            raise InvalidCategory(f"view category index out of range: {self.index}")

    @property
    def kind(self) -> ViewKind:
        return ViewKind.FRONT if self.index % 2 == 0 else ViewKind.CORNER


@dataclass(frozen=True)
class AnchorEdge:
    direction: Tuple[float, float, float]
    length: float

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.direction) * self.length


@dataclass(frozen=True)
class AnchorSpec:
    category: ViewCategory
    anchor_point: Tuple[float, float, float]
    edge_left: AnchorEdge
    edge_right: AnchorEdge
    edge_up: AnchorEdge
    edge_down: AnchorEdge


@dataclass(frozen=True)
class RefineParams:
    d_l: float = 1.0
    d_r: float = 1.0
    d_u: float = 1.0
    d_d: float = 1.0

    def __post_init__(self):
        for name in ("d_l", "d_r", "d_u", "d_d"):
            v = float(getattr(self, name))
            if not (PARAM_LOW < v < PARAM_HIGH):
                raise OutOfRange(f"{name}={v} outside ({PARAM_LOW}, {PARAM_HIGH})")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.d_l, self.d_r, self.d_u, self.d_d])

    def as_list(self) -> list:
        return [self.d_l, self.d_r, self.d_u, self.d_d]

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "RefineParams":
        return cls(*(float(v) for v in x))


IDENTITY = RefineParams()


def visible_faces(b: Box3D, sensor: Sequence[float]) -> Tuple[bool, bool, bool, bool]:
    """Side faces (+x, +y, -x, -y) of the box seen from `sensor`, judged horizontally."""
    s = np.asarray(sensor, dtype=np.float64)
    if s.shape[0] == 2:
        s = np.array([s[0], s[1], b.z])
    u, v = b.to_local(s)[:2]
    return (bool(u > b.l / 2), bool(v > b.w / 2), bool(u < -b.l / 2), bool(v < -b.w / 2))


def classify_view(b: Box3D, sensor: Sequence[float]) -> ViewCategory:
    faces = visible_faces(b, sensor)
    if not any(faces):
        raise SensorInsideFootprint(f"sensor {tuple(sensor)} lies inside the box footprint")
    return ViewCategory(_FACES_TO_INDEX[faces])


def _image_order(cam: CameraModel, anchor: np.ndarray, a: AnchorEdge, b: AnchorEdge) -> bool:
    """True when edge `a` ends further left in the image than edge `b`."""
    pa = project_point(cam, anchor + a.vector)
    pb = project_point(cam, anchor + b.vector)
    if pa is None or pb is None:
        raise ProjectionDegenerate("far anchor-edge endpoint behind the near plane")
    if pa[0] == pb[0]:
        raise ProjectionDegenerate("far anchor-edge endpoints share an image column")
    return pa[0] < pb[0]


def _bearing_order(sensor: np.ndarray, anchor: np.ndarray, a: AnchorEdge, b: AnchorEdge) -> bool:
    # seen from above, counterclockwise of the line of sight is the viewer's left
    f = anchor[:2] - sensor[:2]
    va = (anchor + a.vector)[:2] - sensor[:2]
    vb = (anchor + b.vector)[:2] - sensor[:2]
    ca = f[0] * va[1] - f[1] * va[0]
    cb = f[0] * vb[1] - f[1] * vb[0]
    return ca >= cb


def anchor_spec(b: Box3D, cat: ViewCategory, cam: CameraModel) -> AnchorSpec:
    """Anchor point and the four anchor edges of `b` for the given view."""
    rot = b.rotation
    axes = (rot[:, 0], rot[:, 1])
    center = b.center

    if cat.kind is ViewKind.CORNER:
        sx, sy = _CORNER_SIGNS[cat.index]
        anchor = center + sx * axes[0] * (b.l / 2) + sy * axes[1] * (b.w / 2)
        a = AnchorEdge(tuple((-sx * axes[0]).tolist()), b.l)
        c = AnchorEdge(tuple((-sy * axes[1]).tolist()), b.w)
    else:
        axis, sign = _FACE_AXIS[cat.index]
        depth = b.l if axis == 0 else b.w
        face_axis = axes[1 - axis]
        half = (b.w if axis == 0 else b.l) / 2
        anchor = center + sign * axes[axis] * (depth / 2)
        a = AnchorEdge(tuple((-face_axis).tolist()), half)
        c = AnchorEdge(tuple(face_axis.tolist()), half)

    try:
        a_is_left = _image_order(cam, anchor, a, c)
    except ProjectionDegenerate as e:
        logger.debug("left/right by bearing for camera %s: %s", cam.name, e)
        a_is_left = _bearing_order(cam.center, anchor, a, c)
    left, right = (a, c) if a_is_left else (c, a)

    return AnchorSpec(
        category=cat,
        anchor_point=tuple(float(v) for v in anchor),
        edge_left=left,
        edge_right=right,
        edge_up=AnchorEdge(UP, b.h / 2),
        edge_down=AnchorEdge(DOWN, b.h / 2),
    )


def spec_for_camera(b: Box3D, cam: CameraModel) -> AnchorSpec:
    return anchor_spec(b, classify_view(b, cam.center), cam)


def apply_refinement(b: Box3D, spec: AnchorSpec, d: RefineParams) -> Box3D:
    """Scale the four anchor edges; the anchored face or edge and the yaw stay put."""
    anchor = np.asarray(spec.anchor_point)

    z_up = anchor[2] + d.d_u * spec.edge_up.length * spec.edge_up.direction[2]
    z_down = anchor[2] + d.d_d * spec.edge_down.length * spec.edge_down.direction[2]
    top, bottom = max(z_up, z_down), min(z_up, z_down)

    v_left = d.d_l * spec.edge_left.vector
    v_right = d.d_r * spec.edge_right.vector
    rot = b.rotation
    ex, ey = rot[:, 0], rot[:, 1]
    right_along_x = abs(float(np.dot(spec.edge_right.direction, ex))) > 0.5

    if spec.category.kind is ViewKind.CORNER:
        center = anchor + 0.5 * (v_left + v_right)
        left_dim = d.d_l * spec.edge_left.length
        right_dim = d.d_r * spec.edge_right.length
        l, w = (right_dim, left_dim) if right_along_x else (left_dim, right_dim)
    else:
        face_center = 0.5 * ((anchor + v_left) + (anchor + v_right))
        face_dim = d.d_l * spec.edge_left.length + d.d_r * spec.edge_right.length
        normal_axis = ey if right_along_x else ex
        depth = b.w if right_along_x else b.l
        # outward normal of the anchored face
        sign = 1.0 if np.dot(anchor - b.center, normal_axis) >= 0 else -1.0
        center = face_center - sign * normal_axis * (depth / 2)
        l, w = (face_dim, depth) if right_along_x else (depth, face_dim)

    return Box3D(
        x=float(center[0]),
        y=float(center[1]),
        z=float(0.5 * (top + bottom)),
        l=float(l),
        w=float(w),
        h=float(top - bottom),
        yaw=b.yaw,
    )


def advance_spec(spec: AnchorSpec, d: RefineParams) -> AnchorSpec:
    """AnchorSpec of the refined box measured from the same fixed anchor."""
    return AnchorSpec(
        category=spec.category,
        anchor_point=spec.anchor_point,
        edge_left=AnchorEdge(spec.edge_left.direction, spec.edge_left.length * d.d_l),
        edge_right=AnchorEdge(spec.edge_right.direction, spec.edge_right.length * d.d_r),
        edge_up=AnchorEdge(spec.edge_up.direction, spec.edge_up.length * d.d_u),
        edge_down=AnchorEdge(spec.edge_down.direction, spec.edge_down.length * d.d_d),
    )


def compose_params(d1: RefineParams, d2: RefineParams) -> RefineParams:
    prod = d1.as_array() * d2.as_array()
    if not np.all((prod > PARAM_LOW) & (prod < PARAM_HIGH)):
        raise OutOfRange(f"composed params {prod.tolist()} leave ({PARAM_LOW}, {PARAM_HIGH})")
    return RefineParams.from_array(prod)


def invert_params(d: RefineParams) -> RefineParams:
    inv = 1.0 / d.as_array()
    if not np.all(inv < PARAM_HIGH):
        raise OutOfRange(f"inverse of {d.as_list()} leaves ({PARAM_LOW}, {PARAM_HIGH})")
    return RefineParams.from_array(inv)


def sample_augmentation(rng: np.random.Generator, spread: float = 0.2) -> RefineParams:
    """Random D_aug around identity, each component in [1 - spread, 1 + spread]."""
    if not 0.0 <= spread < 1.0:
        raise OutOfRange(f"augmentation spread must be in [0, 1), got {spread}")
    return RefineParams.from_array(rng.uniform(1.0 - spread, 1.0 + spread, size=4))


def anchored_faces(cat: ViewCategory) -> Tuple[Tuple[int, int], ...]:
    """(axis, sign) of each side face held fixed for the category; axis 0 = box x."""
    faces = next(f for f, idx in _FACES_TO_INDEX.items() if idx == cat.index)
    out = []
    for flag, face in zip(faces, ((0, 1), (1, 1), (0, -1), (1, -1))):
        if flag:
            out.append(face)
    return tuple(out)


def face_plane_offsets(b: Box3D, cat: ViewCategory, point: Sequence[float]) -> Tuple[float, ...]:
    """Signed distances from `point` to the supporting planes of the anchored faces of `b`."""
    local = b.to_local(point)
    half = 0.5 * b.dims
    return tuple(float(sign * local[axis] - half[axis]) for axis, sign in anchored_faces(cat))
