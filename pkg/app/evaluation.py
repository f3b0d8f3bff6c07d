# app/evaluation.py
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset.schema import Frame, TruthRecord
from .errors import CuboidError, MismatchedObjects
from .geometry import Box2D, clamp_to_image, iou_2d, iou_3d, iou_bev, project_box

logger = logging.getLogger(__name__)

RECALL_THRESHOLDS = (0.5, 0.7, 0.9)
AVERAGE = "average"

# (frame_id, object_id, camera, gt box)
GtEntry = Tuple[str, str, str, Box2D]


@dataclass
class EvalColumn:
    count: int = 0
    avg_iou_before: float = 0.0
    avg_iou_after: float = 0.0
    recall_before: Dict[float, float] = field(default_factory=lambda: {t: 0.0 for t in RECALL_THRESHOLDS})
    recall_after: Dict[float, float] = field(default_factory=lambda: {t: 0.0 for t in RECALL_THRESHOLDS})
    mean_bev_iou: float = 0.0
    mean_iou_3d: float = 0.0


@dataclass
class EvalReport:
    columns: Dict[str, EvalColumn] = field(default_factory=dict)
    n_objects: int = 0
    n_evaluated: int = 0

    @property
    def average(self) -> EvalColumn:
        return self.columns.get(AVERAGE, EvalColumn())


def gt_from_truth(truth: Sequence[TruthRecord]) -> List[GtEntry]:
    return [(t.frame_id, t.object_id, t.camera, t.true_box2d) for t in truth]


def gt_from_frames(frames: Sequence[Frame]) -> List[GtEntry]:
    out: List[GtEntry] = []
    for f in frames:
        for o in f.objects:
            for cam_name in sorted(o.gt_box2d):
                out.append((f.frame_id, o.object_id, cam_name, o.gt_box2d[cam_name]))
    return out


def _index(frames: Sequence[Frame]) -> Dict[Tuple[str, str], Tuple[Frame, object]]:
    out = {}
    for f in frames:
        for o in f.objects:
            out[(f.frame_id, o.object_id)] = (f, o)
    return out


def _column(iou_b: List[float], iou_a: List[float], bev: List[float], vol: List[float]) -> EvalColumn:
    if not iou_b:
        return EvalColumn()
    b = np.array(iou_b)
    a = np.array(iou_a)
    return EvalColumn(
        count=len(iou_b),
        avg_iou_before=float(b.mean()),
        avg_iou_after=float(a.mean()),
        recall_before={t: float(np.mean(b >= t)) for t in RECALL_THRESHOLDS},
        recall_after={t: float(np.mean(a >= t)) for t in RECALL_THRESHOLDS},
        mean_bev_iou=float(np.mean(bev)),
        mean_iou_3d=float(np.mean(vol)),
    )


def evaluate(
    before: Sequence[Frame],
    after: Sequence[Frame],
    gt: Sequence[GtEntry],
    clamp: bool = False,
) -> EvalReport:
    """2D IoU against gt before/after refinement, plus BEV/3D IoU between input and refined boxes."""
    idx_b = _index(before)
    idx_a = _index(after)
    missing = sorted(set(idx_b) ^ set(idx_a))
    if missing:
        fid, oid = missing[0]
        side = "after" if (fid, oid) in idx_b else "before"
        raise MismatchedObjects(f"object {oid} of frame {fid} missing from the {side} dataset")

    per_cam: Dict[str, Tuple[List[float], List[float], List[float], List[float]]] = {}
    cam_order: List[str] = []
    for f in before:
        for c in f.cameras:
            if c.name not in cam_order:
                cam_order.append(c.name)

    evaluated = 0
    for frame_id, object_id, cam_name, box in sorted(gt, key=lambda g: (g[0], g[1], g[2])):
        key = (frame_id, object_id)
        if key not in idx_b:
            continue
        frame_b, obj_b = idx_b[key]
        _, obj_a = idx_a[key]
        cam = frame_b.camera(cam_name)
        ious = []
        for b3 in (obj_b.box3d, obj_a.box3d):
            try:
                proj, _ = project_box(cam, b3)
                if clamp:
                    proj = clamp_to_image(proj, cam)
                ious.append(iou_2d(proj, box))
            except CuboidError:
                ious.append(0.0)
        cols = per_cam.setdefault(cam_name, ([], [], [], []))
        cols[0].append(ious[0])
        cols[1].append(ious[1])
        cols[2].append(iou_bev(obj_b.box3d, obj_a.box3d))
        cols[3].append(iou_3d(obj_b.box3d, obj_a.box3d))
        evaluated += 1

    report = EvalReport(n_objects=len(idx_b), n_evaluated=evaluated)
    for name in cam_order + sorted(set(per_cam) - set(cam_order)):
        if name in per_cam:
            report.columns[name] = _column(*per_cam[name])
    merged = [sum((per_cam[n][k] for n in per_cam), []) for k in range(4)]
    report.columns[AVERAGE] = _column(*merged)
    logger.info("evaluated %d of %d objects", evaluated, len(idx_b))
    return report


def report_to_flat(report: EvalReport) -> Dict[str, float]:
    flat: Dict[str, float] = {"n_objects": report.n_objects, "n_evaluated": report.n_evaluated}
    for name, col in report.columns.items():
        flat[f"{name}.count"] = col.count
        flat[f"{name}.avg_iou_before"] = col.avg_iou_before
        flat[f"{name}.avg_iou_after"] = col.avg_iou_after
        for t in RECALL_THRESHOLDS:
            flat[f"{name}.recall_{t:.1f}_before"] = col.recall_before[t]
            flat[f"{name}.recall_{t:.1f}_after"] = col.recall_after[t]
        flat[f"{name}.mean_bev_iou"] = col.mean_bev_iou
        flat[f"{name}.mean_iou_3d"] = col.mean_iou_3d
    return flat


def dumps_report(report: EvalReport) -> str:
    return json.dumps(report_to_flat(report), sort_keys=True, indent=1) + "\n"


def format_table(report: EvalReport, title: Optional[str] = None) -> str:
    """Rows Avg. IoU / Recall(IoU >= t) / BEV / 3D, each with Original and Refined sub-rows."""
    names = list(report.columns)
    head = ["Metric", ""] + [("Avg." if n == AVERAGE else n) for n in names]
    rows: List[List[str]] = []

    def add(metric: str, original, refined):
        rows.append([metric, "Original"] + [original(report.columns[n]) for n in names])
        rows.append(["", "Refined"] + [refined(report.columns[n]) for n in names])

    add("Avg. IoU", lambda c: f"{c.avg_iou_before:.3f}", lambda c: f"{c.avg_iou_after:.3f}")
    for t in RECALL_THRESHOLDS:
        add(
            f"Recall(IoU >= {t:.1f})",
            lambda c, t=t: f"{100 * c.recall_before[t]:.1f}%",
            lambda c, t=t: f"{100 * c.recall_after[t]:.1f}%",
        )
    rows.append(["BEV IoU (input vs refined)", ""] + [f"{report.columns[n].mean_bev_iou:.3f}" for n in names])
    rows.append(["3D IoU (input vs refined)", ""] + [f"{report.columns[n].mean_iou_3d:.3f}" for n in names])
    rows.append(["Count", ""] + [str(report.columns[n].count) for n in names])

    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    lines = []
    if title:
        lines.append(title)
    fmt = lambda r: "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip()
    lines.append(fmt(head))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"
