# app/dataset/schema.py
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..anchor import RefineParams
from ..errors import CuboidError, DatasetError, ParseError, SchemaVersionMismatch, UnknownCamera
from ..geometry import Box2D, Box3D, CameraModel

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


# ---------------- domain records ----------------

@dataclass
class ObjectRecord:
    object_id: str
    box3d: Box3D
    gt_box2d: Dict[str, Box2D] = field(default_factory=dict)
    planted_params: Optional[RefineParams] = None
    pseudo_box2d: Dict[str, Box2D] = field(default_factory=dict)
    annotations: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Frame:
    frame_id: str
    cameras: List[CameraModel] = field(default_factory=list)
    objects: List[ObjectRecord] = field(default_factory=list)

    def camera(self, name: str) -> CameraModel:
        for c in self.cameras:
            if c.name == name:
                return c
        raise UnknownCamera(f"frame {self.frame_id}: no camera named {name!r}")

    def object(self, object_id: str) -> ObjectRecord:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise DatasetError(f"frame {self.frame_id}: no object {object_id!r}")


@dataclass
class TruthRecord:
    frame_id: str
    object_id: str
    camera: str
    true_box3d: Box3D
    planted_params: RefineParams
    true_box2d: Box2D


# ---------------- wire models ----------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExtrinsicsIn(_Strict):
    rotation: List[float] = Field(min_length=9, max_length=9)
    translation: List[float] = Field(min_length=3, max_length=3)


class CameraIn(_Strict):
    name: str = Field(min_length=1)
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    ego_to_cam: ExtrinsicsIn


class Box3DIn(_Strict):
    x: float
    y: float
    z: float
    l: float = Field(gt=0)
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    yaw: float


class Box2DIn(_Strict):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.x_min > self.x_max:
            raise ValueError(f"x_min {self.x_min} > x_max {self.x_max}")
        if self.y_min > self.y_max:
            raise ValueError(f"y_min {self.y_min} > y_max {self.y_max}")
        return self


class ObjectIn(_Strict):
    object_id: str = Field(min_length=1)
    box3d: Box3DIn
    gt_box2d: Dict[str, Box2DIn] = Field(default_factory=dict)
    planted_params: Optional[List[float]] = Field(default=None, min_length=4, max_length=4)
    pseudo_box2d: Dict[str, Box2DIn] = Field(default_factory=dict)
    annotations: Dict[str, Any] = Field(default_factory=dict)


class FrameIn(_Strict):
    schema_version: int
    frame_id: str = Field(min_length=1)
    cameras: List[CameraIn] = Field(default_factory=list)
    objects: List[ObjectIn] = Field(default_factory=list)


class TruthIn(_Strict):
    frame_id: str
    object_id: str
    camera: str
    true_box3d: Box3DIn
    planted_params: List[float] = Field(min_length=4, max_length=4)
    true_box2d: Box2DIn


# ---------------- conversion ----------------

def _box3d(m: Box3DIn) -> Box3D:
    return Box3D(m.x, m.y, m.z, m.l, m.w, m.h, m.yaw)


def _box2d(m: Box2DIn) -> Box2D:
    return Box2D(m.x_min, m.y_min, m.x_max, m.y_max)


def box3d_to_dict(b: Box3D) -> Dict[str, float]:
    return {"x": b.x, "y": b.y, "z": b.z, "l": b.l, "w": b.w, "h": b.h, "yaw": b.yaw}


def box2d_to_dict(b: Box2D) -> Dict[str, float]:
    return {"x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max}


def camera_to_dict(c: CameraModel) -> Dict[str, Any]:
    return {
        "name": c.name,
        "fx": c.fx,
        "fy": c.fy,
        "cx": c.cx,
        "cy": c.cy,
        "width": c.width,
        "height": c.height,
        "ego_to_cam": {"rotation": list(c.rotation), "translation": list(c.translation)},
    }


def camera_from_dict(m: CameraIn) -> CameraModel:
    return CameraModel(
        name=m.name, fx=m.fx, fy=m.fy, cx=m.cx, cy=m.cy, width=m.width, height=m.height,
        rotation=tuple(m.ego_to_cam.rotation), translation=tuple(m.ego_to_cam.translation),
    )


def frame_to_dict(frame: Frame) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "frame_id": frame.frame_id,
        "cameras": [camera_to_dict(c) for c in frame.cameras],
        "objects": [
            {
                "object_id": o.object_id,
                "box3d": box3d_to_dict(o.box3d),
                "gt_box2d": {k: box2d_to_dict(v) for k, v in o.gt_box2d.items()},
                "planted_params": o.planted_params.as_list() if o.planted_params else None,
                **({"pseudo_box2d": {k: box2d_to_dict(v) for k, v in o.pseudo_box2d.items()}}
                   if o.pseudo_box2d else {}),
                **({"annotations": o.annotations} if o.annotations else {}),
            }
            for o in frame.objects
        ],
    }


def _field_path(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(p) for p in first.get("loc", ()))


def _frame_from_model(m: FrameIn, line: Optional[int]) -> Frame:
    cameras = []
    for i, c in enumerate(m.cameras):
        try:
            cameras.append(camera_from_dict(c))
        except CuboidError as e:
            raise ParseError(str(e), line=line, field=f"cameras.{i}")
    names = {c.name for c in cameras}
    if len(names) != len(cameras):
        raise ParseError("duplicate camera name", line=line, field="cameras")

    objects = []
    seen = set()
    for i, o in enumerate(m.objects):
        if o.object_id in seen:
            raise ParseError(f"duplicate object_id {o.object_id!r}", line=line, field=f"objects.{i}.object_id")
        seen.add(o.object_id)
        for key in ("gt_box2d", "pseudo_box2d"):
            for cam_name in getattr(o, key):
                if cam_name not in names:
                    raise ParseError(f"unknown camera {cam_name!r}", line=line, field=f"objects.{i}.{key}.{cam_name}")
        try:
            objects.append(ObjectRecord(
                object_id=o.object_id,
                box3d=_box3d(o.box3d),
                gt_box2d={k: _box2d(v) for k, v in o.gt_box2d.items()},
                planted_params=RefineParams.from_array(o.planted_params) if o.planted_params else None,
                pseudo_box2d={k: _box2d(v) for k, v in o.pseudo_box2d.items()},
                annotations=dict(o.annotations),
            ))
        except CuboidError as e:
            raise ParseError(str(e), line=line, field=f"objects.{i}")
    return Frame(frame_id=m.frame_id, cameras=cameras, objects=objects)


def parse_frame_line(text: str, line: Optional[int] = None) -> Frame:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line=line)
    if not isinstance(raw, dict):
        raise ParseError("frame must be a JSON object", line=line)
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"line {line}: schema_version {version!r}, expected {SCHEMA_VERSION}")
    try:
        model = FrameIn.model_validate(raw)
    except ValidationError as e:
        raise ParseError(e.errors()[0].get("msg", "invalid value"), line=line, field=_field_path(e))
    return _frame_from_model(model, line)


def _dumps(obj: Any) -> str:
    # repr-based float output round-trips exactly
    return json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


def _iter_lines(path: PathLike) -> Iterable[tuple]:
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(f"invalid UTF-8 at byte {e.start}", line=line_no)
            if line.strip():
                yield line_no, line


def read_frames(path: PathLike) -> List[Frame]:
    return [parse_frame_line(text, line_no) for line_no, text in _iter_lines(path)]


def write_frames(frames: Iterable[Frame], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for frame in frames:
            f.write(_dumps(frame_to_dict(frame)) + "\n")


def truth_to_dict(t: TruthRecord) -> Dict[str, Any]:
    return {
        "frame_id": t.frame_id,
        "object_id": t.object_id,
        "camera": t.camera,
        "true_box3d": box3d_to_dict(t.true_box3d),
        "planted_params": t.planted_params.as_list(),
        "true_box2d": box2d_to_dict(t.true_box2d),
    }


def read_truth(path: PathLike) -> List[TruthRecord]:
    out = []
    for line_no, text in _iter_lines(path):
        try:
            m = TruthIn.model_validate(json.loads(text))
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", line=line_no)
        except ValidationError as e:
            raise ParseError(e.errors()[0].get("msg", "invalid value"), line=line_no, field=_field_path(e))
        out.append(TruthRecord(
            frame_id=m.frame_id,
            object_id=m.object_id,
            camera=m.camera,
            true_box3d=_box3d(m.true_box3d),
            planted_params=RefineParams.from_array(m.planted_params),
            true_box2d=_box2d(m.true_box2d),
        ))
    return out


def write_truth(records: Iterable[TruthRecord], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in records:
            f.write(_dumps(truth_to_dict(t)) + "\n")


def write_jsonl(records: Iterable[Dict[str, Any]], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(_dumps(r) + "\n")


def truth_path(dataset_path: PathLike) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".truth.jsonl")
