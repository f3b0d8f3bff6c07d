# app/geometry.py
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EntirelyBehindCamera, GeometryError

NEAR_PLANE = 0.1  # meters, camera depth cutoff

# corner pairs of the 12 wireframe segments: bottom ring, top ring, verticals
BOX_EDGES: Tuple[Tuple[int, int], ...] = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)

# box-frame corner signs: bottom face CCW from (+l/2, +w/2), then top face
_CORNER_SIGNS = np.array([
    [1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
    [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1],
], dtype=np.float64)


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]. Values already in range come back unchanged."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.l, self.w, self.h, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"Box3D fields must be finite: {vals}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise GeometryError(f"Box3D dims must be positive: l={self.l} w={self.w} h={self.h}")
        for name in ("x", "y", "z", "l", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h])

    @property
    def rotation(self) -> np.ndarray:
        return yaw_rotation(self.yaw)

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def to_local(self, p: Sequence[float]) -> np.ndarray:
        """Ego-frame point expressed in the box frame."""
        return self.rotation.T @ (np.asarray(p, dtype=np.float64) - self.center)

    @classmethod
    def from_corners(cls, corners: np.ndarray) -> "Box3D":
        """Inverse of box_corners for corners in this module's indexing."""
        c = np.asarray(corners, dtype=np.float64).reshape(8, 3)
        center = c.mean(axis=0)
        ax = c[0] - c[1]
        l = float(np.linalg.norm(ax))
        w = float(np.linalg.norm(c[1] - c[2]))
        h = float(np.linalg.norm(c[4] - c[0]))
        yaw = math.atan2(ax[1], ax[0])
        return cls(float(center[0]), float(center[1]), float(center[2]), l, w, h, yaw)


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"Box2D fields must be finite: {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(f"Box2D min exceeds max: {vals}")
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        """Edges in (left, top, right, bottom) order."""
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])


@dataclass(frozen=True)
class EdgeLegality:
    left: bool = True
    right: bool = True
    top: bool = True
    bottom: bool = True

    def as_mask(self) -> np.ndarray:
        """Same order as Box2D.as_array."""
        return np.array([self.left, self.top, self.right, self.bottom], dtype=bool)

    @property
    def all_legal(self) -> bool:
        return self.left and self.right and self.top and self.bottom


ALL_LEGAL = EdgeLegality()


@dataclass(frozen=True)
class CameraModel:
    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: Tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.name:
            raise GeometryError("camera name must be non-empty")
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"camera {self.name}: focal lengths must be positive")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise GeometryError(f"camera {self.name}: image size must be positive")
        rot = tuple(float(v) for v in self.rotation)
        trans = tuple(float(v) for v in self.translation)
        if len(rot) != 9 or len(trans) != 3:
            raise GeometryError(f"camera {self.name}: rotation needs 9 values, translation 3")
        if not all(math.isfinite(v) for v in rot + trans):
            raise GeometryError(f"camera {self.name}: extrinsics must be finite")
        r = np.array(rot).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9) or np.linalg.det(r) <= 0:
            raise GeometryError(f"camera {self.name}: rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @cached_property
    def R(self) -> np.ndarray:
        return np.array(self.rotation).reshape(3, 3)

    @cached_property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @cached_property
    def center(self) -> np.ndarray:
        """Optical center in the ego frame."""
        return -self.R.T @ self.t

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) ego points -> (N, 3) camera points (x right, y down, z forward)."""
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def pixels(self, pts_cam: np.ndarray) -> np.ndarray:
        """(N, 3) camera points in front of the camera -> (N, 2) pixels."""
        h = np.asarray(pts_cam, dtype=np.float64) @ self.intrinsic_matrix.T
        return h[:, :2] / h[:, 2:3]

    @classmethod
    def from_yaw(
        cls,
        name: str,
        yaw: float,
        position: Sequence[float],
        fx: float,
        fy: float,
        width: int,
        height: int,
        cx: Optional[float] = None,
        cy: Optional[float] = None,
    ) -> "CameraModel":
        """Level camera looking along ego heading `yaw` from `position` (ego frame)."""
        c, s = math.cos(yaw), math.sin(yaw)
        forward = np.array([c, s, 0.0])
        right = np.array([s, -c, 0.0])
        down = np.array([0.0, 0.0, -1.0])
        r = np.stack([right, down, forward])
        t = -r @ np.asarray(position, dtype=np.float64)
        return cls(
            name=name,
            fx=fx,
            fy=fy,
            cx=width / 2.0 if cx is None else cx,
            cy=height / 2.0 if cy is None else cy,
            width=width,
            height=height,
            rotation=tuple(r.reshape(-1).tolist()),
            translation=tuple(t.tolist()),
        )


def box_corners(b: Box3D) -> np.ndarray:
    """(8, 3) corners in the ego frame."""
    offsets = _CORNER_SIGNS * (0.5 * b.dims)
    return offsets @ b.rotation.T + b.center


def project_point(
    cam: CameraModel, p: Sequence[float], near: float = NEAR_PLANE
) -> Optional[Tuple[float, float, float]]:
    """(u, v, depth) or None when the point is not in front of the near plane."""
    pc = cam.to_camera(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]
    zc = float(pc[2])
    if zc <= near:
        return None
    u, v = cam.pixels(pc.reshape(1, 3))[0]
    return float(u), float(v), zc


def _clip_points(pts_cam: np.ndarray, front: np.ndarray, near: float) -> np.ndarray:
    """Intersections of the wireframe segments that cross the near plane."""
    out = []
    for i, j in BOX_EDGES:
        if front[i] == front[j]:
            continue
        pi, pj = pts_cam[i], pts_cam[j]
        t = (near - pi[2]) / (pj[2] - pi[2])
        q = pi + t * (pj - pi)
        q[2] = near
        out.append(q)
    return np.array(out).reshape(-1, 3)


def project_box(cam: CameraModel, b: Box3D, near: float = NEAR_PLANE) -> Tuple[Box2D, EdgeLegality]:
    """Axis-aligned hull of the near-plane-clipped wireframe, not clamped to the image."""
    pts_cam = cam.to_camera(box_corners(b))
    front = pts_cam[:, 2] > near
    if not front.any():
        raise EntirelyBehindCamera(f"box at ({b.x:.2f}, {b.y:.2f}, {b.z:.2f}) is behind camera {cam.name}")

    uv = cam.pixels(pts_cam[front])
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    if front.all():
        return Box2D(lo[0], lo[1], hi[0], hi[1]), ALL_LEGAL

    clip_uv = cam.pixels(_clip_points(pts_cam, front, near))
    clo = clip_uv.min(axis=0)
    chi = clip_uv.max(axis=0)
    legality = EdgeLegality(
        left=bool(lo[0] <= clo[0]),
        right=bool(hi[0] >= chi[0]),
        top=bool(lo[1] <= clo[1]),
        bottom=bool(hi[1] >= chi[1]),
    )
    lo = np.minimum(lo, clo)
    hi = np.maximum(hi, chi)
    return Box2D(lo[0], lo[1], hi[0], hi[1]), legality


def project_wireframe(
    cam: CameraModel, b: Box3D, near: float = NEAR_PLANE
) -> List[Tuple[Tuple[float, float], Tuple[float, float], bool]]:
    """Projected segments ((u0, v0), (u1, v1), clipped) for the visible part of each edge."""
    pts_cam = cam.to_camera(box_corners(b))
    segs = []
    for i, j in BOX_EDGES:
        pi, pj = pts_cam[i].copy(), pts_cam[j].copy()
        fi, fj = pi[2] > near, pj[2] > near
        if not fi and not fj:
            continue
        clipped = False
        if fi != fj:
            t = (near - pi[2]) / (pj[2] - pi[2])
            q = pi + t * (pj - pi)
            q[2] = near
            if fi:
                pj = q
            else:
                pi = q
            clipped = True
        uv = cam.pixels(np.stack([pi, pj]))
        segs.append(((float(uv[0, 0]), float(uv[0, 1])), (float(uv[1, 0]), float(uv[1, 1])), clipped))
    return segs


def clamp_to_image(box: Box2D, cam: CameraModel) -> Box2D:
    x0 = min(max(box.x_min, 0.0), cam.width)
    x1 = min(max(box.x_max, 0.0), cam.width)
    y0 = min(max(box.y_min, 0.0), cam.height)
    y1 = min(max(box.y_max, 0.0), cam.height)
    return Box2D(x0, y0, x1, y1)


def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        # both boxes degenerate
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def bev_polygon(b: Box3D) -> np.ndarray:
    """(4, 2) footprint, counterclockwise."""
    return box_corners(b)[:4, :2]


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_clip(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: `subject` clipped by the convex CCW polygon `clip`."""

    def inside(p, a, e):
        return (e[0] - a[0]) * (p[1] - a[1]) - (e[1] - a[1]) * (p[0] - a[0]) >= 0.0

    def intersect(s, e, a, c):
        d1 = e - s
        d2 = c - a
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(denom) < 1e-12:
            # collinear within roundoff: e already lies on the clip line
            return e
        t = ((a[0] - s[0]) * d2[1] - (a[1] - s[1]) * d2[0]) / denom
        return s + t * d1

    output = [np.asarray(p, dtype=np.float64) for p in subject]
    a = clip[-1]
    for c in clip:
        inp = output
        output = []
        if not inp:
            break
        s = inp[-1]
        for e in inp:
            if inside(e, a, c):
                if not inside(s, a, c):
                    output.append(intersect(s, e, a, c))
                output.append(e)
            elif inside(s, a, c):
                output.append(intersect(s, e, a, c))
            s = e
        a = c
    return np.array(output).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    return polygon_area(polygon_clip(bev_polygon(a), bev_polygon(b)))


def iou_bev(a: Box3D, b: Box3D) -> float:
    if a == b:
        return 1.0
    inter = bev_intersection_area(a, b)
    union = a.l * a.w + b.l * b.w - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    if a == b:
        return 1.0
    overlap_z = min(a.z + a.h / 2, b.z + b.h / 2) - max(a.z - a.h / 2, b.z - b.h / 2)
    if overlap_z <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * overlap_z
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def egocentric_distance(b: Box3D, ref_point: Sequence[float]) -> float:
    """Distance from ref_point to the solid box, 0 inside."""
    local = b.to_local(ref_point)
    half = 0.5 * b.dims
    nearest = np.clip(local, -half, half)
    return float(np.linalg.norm(local - nearest))
