# app/dataset/synth.py
from __future__ import annotations

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..anchor import (
    AnchorSpec,
    RefineParams,
    ViewKind,
    apply_refinement,
    invert_params,
    spec_for_camera,
)
from ..errors import CuboidError
from ..geometry import (
    NEAR_PLANE,
    Box3D,
    CameraModel,
    bev_intersection_area,
    box_corners,
    project_box,
)
from .schema import CameraIn, Frame, ObjectRecord, TruthRecord, camera_from_dict

logger = logging.getLogger(__name__)

MAX_RETRIES = 50

# yaw offset (deg) of each surround camera, front first
RIG_LAYOUT = (
    ("front", 0.0),
    ("front_left", 55.0),
    ("front_right", -55.0),
    ("rear_left", 140.0),
    ("rear_right", -140.0),
)
RIG_FOCAL = 1200.0
RIG_SIZE = (1920, 1280)
RIG_POSITION = (1.5, 0.0, 1.6)

# vehicle-sized cuboids, meters
LENGTH_RANGE = (3.8, 5.2)
WIDTH_RANGE = (1.7, 2.1)
HEIGHT_RANGE = (1.4, 1.9)
DEPTH_RANGE = (8.0, 40.0)


def default_rig() -> List[CameraModel]:
    w, h = RIG_SIZE
    return [
        CameraModel.from_yaw(name, math.radians(deg), RIG_POSITION, RIG_FOCAL, RIG_FOCAL, w, h)
        for name, deg in RIG_LAYOUT
    ]


class PoseNoise(BaseModel):
    model_config = ConfigDict(extra="forbid")

    translation: float = Field(default=0.1, ge=0)
    yaw: float = Field(default=0.02, ge=0)


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=0, ge=0, lt=2**64)
    n_frames: int = Field(default=10, ge=0)
    objects_per_frame: int = Field(default=5, ge=0)
    param_range: Tuple[float, float] = (0.7, 1.3)
    pose_noise: PoseNoise = Field(default_factory=PoseNoise)
    gt2d_fraction: float = Field(default=1.0 / 3.0, ge=0, le=1)
    rig: Optional[List[CameraIn]] = None

    @field_validator("param_range")
    @classmethod
    def _range_inside_open_interval(cls, v):
        lo, hi = v
        if not (0.0 < lo <= hi < 2.0):
            raise ValueError(f"param_range must satisfy 0 < lo <= hi < 2, got {list(v)}")
        return v

    @model_validator(mode="after")
    def _rig_not_empty(self):
        if self.rig is not None and not self.rig:
            raise ValueError("rig must list at least one camera")
        return self

    def cameras(self) -> List[CameraModel]:
        if self.rig is None:
            return default_rig()
        return [camera_from_dict(c) for c in self.rig]


def plant_inverse(truth: Box3D, spec: AnchorSpec, d: RefineParams) -> Box3D:
    """Box whose refinement by `d` (under its own anchor spec) gives back `truth`.

    Corner views shrink the anchor edges by `invert_params(d)`, so a scale
    at or below 0.5 raises OutOfRange and the sampler draws again.
    """
    anchor = np.asarray(spec.anchor_point)
    top = truth.z + truth.h / 2
    half_h = truth.h / (d.d_u + d.d_d)
    z = top - d.d_u * half_h

    rot = truth.rotation
    ex = rot[:, 0]
    e_left = np.asarray(spec.edge_left.direction)
    e_right = np.asarray(spec.edge_right.direction)
    right_along_x = abs(float(np.dot(e_right, ex))) > 0.5

    if spec.category.kind is ViewKind.CORNER:
        inv = invert_params(d)
        len_l = spec.edge_left.length * inv.d_l
        len_r = spec.edge_right.length * inv.d_r
        center = anchor + 0.5 * (len_l * e_left + len_r * e_right)
        l, w = (len_r, len_l) if right_along_x else (len_l, len_r)
    else:
        half = spec.edge_right.length
        k = 2.0 * half / (d.d_l + d.d_r)
        face_center = anchor + (d.d_l * k - half) * e_right
        normal = anchor - truth.center
        normal[2] = 0.0
        center = face_center - normal
        depth = truth.w if right_along_x else truth.l
        l, w = (2.0 * k, depth) if right_along_x else (depth, 2.0 * k)

    return Box3D(float(center[0]), float(center[1]), float(z), float(l), float(w), float(2.0 * half_h), truth.yaw)


def _fully_visible(cam: CameraModel, b: Box3D, margin: float = 0.5) -> bool:
    depth = cam.to_camera(box_corners(b))[:, 2]
    return bool(np.all(depth > NEAR_PLANE + margin))


def _sample_truth(rng: np.random.Generator, cam: CameraModel) -> Box3D:
    half_fov = math.atan2(cam.width / 2.0, cam.fx)
    bearing = rng.uniform(-0.7, 0.7) * half_fov
    depth = rng.uniform(*DEPTH_RANGE)
    forward = cam.R[2]
    right = cam.R[0]
    ray = math.cos(bearing) * forward + math.sin(bearing) * right
    ray[2] = 0.0
    ray /= np.linalg.norm(ray)
    ground = cam.center + depth * ray
    l = rng.uniform(*LENGTH_RANGE)
    w = rng.uniform(*WIDTH_RANGE)
    h = rng.uniform(*HEIGHT_RANGE)
    yaw = rng.uniform(-math.pi, math.pi)
    return Box3D(float(ground[0]), float(ground[1]), h / 2.0, l, w, h, yaw)


def _corners_close(a: Box3D, b: Box3D, tol: float = 1e-6) -> bool:
    return bool(np.max(np.abs(box_corners(a) - box_corners(b))) <= tol)


def _sample_object(
    rng: np.random.Generator,
    cfg: SynthConfig,
    cameras: List[CameraModel],
    placed: List[Box3D],
) -> Optional[Tuple[Box3D, Box3D, RefineParams, CameraModel]]:
    for _ in range(MAX_RETRIES):
        cam = cameras[int(rng.integers(len(cameras)))]
        truth = _sample_truth(rng, cam)
        d = RefineParams.from_array(rng.uniform(cfg.param_range[0], cfg.param_range[1], size=4))
        noise_xy = rng.normal(0.0, cfg.pose_noise.translation, size=2)
        noise_yaw = float(rng.normal(0.0, cfg.pose_noise.yaw))

        if any(bev_intersection_area(truth, p) > 0.0 for p in placed):
            continue
        try:
            spec_t = spec_for_camera(truth, cam)
            stored = plant_inverse(truth, spec_t, d)
            spec_s = spec_for_camera(stored, cam)
            if spec_s.category != spec_t.category:
                continue
            if not _corners_close(apply_refinement(stored, spec_s, d), truth):
                continue
            noisy = Box3D(
                stored.x + float(noise_xy[0]), stored.y + float(noise_xy[1]), stored.z,
                stored.l, stored.w, stored.h, stored.yaw + noise_yaw,
            )
            spec_for_camera(noisy, cam)
            if not (_fully_visible(cam, truth) and _fully_visible(cam, noisy)):
                continue
            project_box(cam, noisy)
        except CuboidError as e:
            logger.debug("resampling object: %s", e)
            continue
        return truth, noisy, d, cam
    return None


def generate(cfg: SynthConfig) -> Tuple[List[Frame], List[TruthRecord]]:
    """Seeded scenes with planted refinement parameters and the hidden truth table."""
    rng = np.random.default_rng(cfg.seed)
    cameras = cfg.cameras()
    frames: List[Frame] = []
    truth: List[TruthRecord] = []
    skipped = 0

    for fi in range(cfg.n_frames):
        frame_id = f"frame-{fi:05d}"
        objects: List[ObjectRecord] = []
        placed: List[Box3D] = []
        for oi in range(cfg.objects_per_frame):
            sample = _sample_object(rng, cfg, cameras, placed)
            with_gt = bool(rng.random() < cfg.gt2d_fraction)
            if sample is None:
                skipped += 1
                continue
            true_box, stored, d, cam = sample
            placed.append(true_box)
            object_id = f"{frame_id}-obj{oi:03d}"
            true_2d, _ = project_box(cam, true_box)
            objects.append(ObjectRecord(
                object_id=object_id,
                box3d=stored,
                gt_box2d={cam.name: true_2d} if with_gt else {},
                planted_params=d,
            ))
            truth.append(TruthRecord(
                frame_id=frame_id,
                object_id=object_id,
                camera=cam.name,
                true_box3d=true_box,
                planted_params=d,
                true_box2d=true_2d,
            ))
        frames.append(Frame(frame_id=frame_id, cameras=list(cameras), objects=objects))

    if skipped:
        logger.info("skipped %d objects after %d retries each", skipped, MAX_RETRIES)
    logger.info("generated %d frames, %d objects", len(frames), len(truth))
    return frames, truth
