# app/pipeline.py
from __future__ import annotations

import copy
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .anchor import sample_augmentation
from .dataset.schema import Frame, ObjectRecord, box3d_to_dict
from .errors import CuboidError
from .geometry import Box2D, Box3D, CameraModel
from .matching import DEFAULT_THRESHOLD, match_frame
from .solver import SolverConfig, consistency_error, refine_box

logger = logging.getLogger(__name__)

MATCH_KEY = "match"
REFINE_KEY = "refine"


@dataclass(frozen=True)
class RefineTask:
    frame_id: str
    object_id: str
    box: Box3D
    camera: CameraModel
    target: Optional[Box2D]
    pseudo: Optional[Box2D]
    source: str


@dataclass(frozen=True)
class RefineOptions:
    solver: SolverConfig = SolverConfig()
    huber_delta: float = 1.0
    threshold: float = DEFAULT_THRESHOLD
    jobs: int = 1
    augment: float = 0.0
    seed: int = 0


def match_dataset(frames: Sequence[Frame], threshold: float = DEFAULT_THRESHOLD) -> List[Frame]:
    """Per frame and camera, match every projected proposal to the pooled gt boxes."""
    out = []
    for frame in frames:
        frame = copy.deepcopy(frame)
        proposals = [o.box3d for o in frame.objects]
        for o in frame.objects:
            o.annotations.pop(MATCH_KEY, None)
        for cam in frame.cameras:
            owners = [o.object_id for o in frame.objects if cam.name in o.gt_box2d]
            gt = [frame.object(oid).gt_box2d[cam.name] for oid in owners]
            result = match_frame(proposals, cam, gt, threshold)
            for pi, gi, iou in result.pairs:
                ann = frame.objects[pi].annotations.setdefault(MATCH_KEY, {})
                ann[cam.name] = {"gt_object_id": owners[gi], "iou": iou}
        out.append(frame)
    return out


def _target_for(frame: Frame, obj: ObjectRecord) -> Tuple[Optional[CameraModel], Optional[Box2D], Optional[Box2D], str]:
    """Matched gt first, then the object's own gt, then a pseudo target; cameras in rig order."""
    matches = obj.annotations.get(MATCH_KEY) or {}
    for cam in frame.cameras:
        m = matches.get(cam.name)
        if m:
            owner = frame.object(m["gt_object_id"])
            return cam, owner.gt_box2d[cam.name], None, "matched"
    for cam in frame.cameras:
        if cam.name in obj.gt_box2d:
            return cam, obj.gt_box2d[cam.name], None, "provided"
    for cam in frame.cameras:
        if cam.name in obj.pseudo_box2d:
            return cam, None, obj.pseudo_box2d[cam.name], "pseudo"
    return None, None, None, "no_target"


def _task_seed(seed: int, frame_id: str, object_id: str) -> int:
    digest = hashlib.sha256(f"{seed}/{frame_id}/{object_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def run_task(task: RefineTask, opts: RefineOptions) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "frame_id": task.frame_id,
        "object_id": task.object_id,
        "camera": task.camera.name,
        "target_source": task.source,
    }
    try:
        result = refine_box(task.box, task.camera, task.target, opts.solver, opts.huber_delta, task.pseudo)
        record["status"] = "refined"
        record.update(result.to_record())
        if opts.augment > 0:
            rng = np.random.default_rng(_task_seed(opts.seed, task.frame_id, task.object_id))
            d_aug = sample_augmentation(rng, opts.augment)
            goal = task.target if task.target is not None else task.pseudo
            _, _, econ = consistency_error(task.box, task.camera, goal, d_aug, opts.solver, opts.huber_delta)
            record["d_aug"] = d_aug.as_list()
            record["consistency_loss"] = econ
    except CuboidError as e:
        record["status"] = "failed"
        record["error"] = f"{type(e).__name__}: {e}"
    return record


def _run_task_args(args: Tuple[RefineTask, RefineOptions]) -> Dict[str, Any]:
    return run_task(*args)


def refine_dataset(
    frames: Sequence[Frame], opts: RefineOptions = RefineOptions()
) -> Tuple[List[Frame], List[Dict[str, Any]]]:
    """Refine every object that has a target; results come back sorted by (frame_id, object_id)."""
    frames = sorted((copy.deepcopy(f) for f in frames), key=lambda f: f.frame_id)
    if not any(MATCH_KEY in o.annotations for f in frames for o in f.objects):
        frames = match_dataset(frames, opts.threshold)

    tasks: List[RefineTask] = []
    results: List[Dict[str, Any]] = []
    for frame in frames:
        frame.objects.sort(key=lambda o: o.object_id)
        for obj in frame.objects:
            cam, target, pseudo, source = _target_for(frame, obj)
            if cam is None:
                obj.annotations[REFINE_KEY] = {"status": "no_target"}
                results.append({"frame_id": frame.frame_id, "object_id": obj.object_id, "status": "no_target"})
                continue
            tasks.append(RefineTask(frame.frame_id, obj.object_id, obj.box3d, cam, target, pseudo, source))

    if opts.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=opts.jobs) as pool:
            done = list(pool.map(_run_task_args, [(t, opts) for t in tasks], chunksize=4))
    else:
        done = [run_task(t, opts) for t in tasks]

    by_key = {(r["frame_id"], r["object_id"]): r for r in done}
    for frame in frames:
        for obj in frame.objects:
            r = by_key.get((frame.frame_id, obj.object_id))
            if r is None:
                continue
            ann = {k: v for k, v in r.items() if k not in ("frame_id", "object_id", "refined_box")}
            if r["status"] == "refined":
                ann["input_box3d"] = box3d_to_dict(obj.box3d)
                rb = r["refined_box"]
                obj.box3d = Box3D(rb["x"], rb["y"], rb["z"], rb["l"], rb["w"], rb["h"], rb["yaw"])
            obj.annotations[REFINE_KEY] = ann

    results.extend(done)
    results.sort(key=lambda r: (r["frame_id"], r["object_id"]))
    refined = sum(1 for r in done if r["status"] == "refined")
    logger.info("refined %d of %d objects (%d tasks, jobs=%d)", refined,
                sum(len(f.objects) for f in frames), len(tasks), opts.jobs)
    return frames, results
