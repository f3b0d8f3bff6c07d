# app/dataset/render.py
from __future__ import annotations

from html import escape
from typing import Dict, List, Mapping, Optional, Tuple

from ..errors import CuboidError
from ..geometry import Box2D, Box3D, CameraModel, project_wireframe
from .schema import Frame

BEFORE_COLOR = "red"
AFTER_COLOR = "green"
GT_COLOR = "blue"

Point = Tuple[float, float]


def guard_box(cam: CameraModel) -> Tuple[float, float, float, float]:
    return -cam.width, -cam.height, 2.0 * cam.width, 2.0 * cam.height


def clip_segment(p0: Point, p1: Point, box: Tuple[float, float, float, float]) -> Optional[Tuple[Point, Point]]:
    """Liang-Barsky clip of a segment to an axis-aligned rectangle; None if outside."""
    xmin, ymin, xmax, ymax = box
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, p0[0] - xmin), (dx, xmax - p0[0]), (-dy, p0[1] - ymin), (dy, ymax - p0[1])):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    a = (p0[0] + t0 * dx, p0[1] + t0 * dy)
    b = (p0[0] + t1 * dx, p0[1] + t1 * dy)
    # clamp away roundoff at the guard edges
    a = (min(max(a[0], xmin), xmax), min(max(a[1], ymin), ymax))
    b = (min(max(b[0], xmin), xmax), min(max(b[1], ymin), ymax))
    return a, b


def _wireframe_group(cam: CameraModel, b: Box3D, object_id: str, kind: str, color: str) -> Optional[str]:
    try:
        segs = project_wireframe(cam, b)
    except CuboidError:
        return None
    guard = guard_box(cam)
    lines: List[str] = []
    for p0, p1, clipped in segs:
        seg = clip_segment(p0, p1, guard)
        if seg is None:
            continue
        (x0, y0), (x1, y1) = seg
        extra = ' stroke-dasharray="2,2"' if clipped else ""
        lines.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y1:.3f}"{extra}/>')
    if not lines:
        return None
    return (
        f'<g class="wireframe {kind}" data-object="{escape(object_id)}" stroke="{color}" fill="none">'
        + "".join(lines)
        + "</g>"
    )


def _gt_rect(box: Box2D, cam: CameraModel, object_id: str) -> str:
    x0, y0, x1, y1 = guard_box(cam)
    bx0 = min(max(box.x_min, x0), x1)
    bx1 = min(max(box.x_max, x0), x1)
    by0 = min(max(box.y_min, y0), y1)
    by1 = min(max(box.y_max, y0), y1)
    return (
        f'<rect class="gt" data-object="{escape(object_id)}" x="{bx0:.3f}" y="{by0:.3f}" '
        f'width="{bx1 - bx0:.3f}" height="{by1 - by0:.3f}" stroke="{GT_COLOR}" '
        f'stroke-dasharray="8,4" fill="none"/>'
    )


def render_svg(
    frame: Frame,
    camera: str,
    before: Optional[Mapping[str, Box3D]] = None,
    after: Optional[Mapping[str, Box3D]] = None,
) -> str:
    """Image-sized overlay: input projections red, refined green, gt 2D boxes blue dashed."""
    cam = frame.camera(camera)
    if before is None:
        before = {o.object_id: o.box3d for o in frame.objects}
    after = after or {}

    parts: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cam.width}" height="{cam.height}" '
        f'viewBox="0 0 {cam.width} {cam.height}">',
        f'<rect class="canvas" x="0" y="0" width="{cam.width}" height="{cam.height}" fill="white" stroke="black"/>',
    ]
    gt: Dict[str, Box2D] = {o.object_id: o.gt_box2d[camera] for o in frame.objects if camera in o.gt_box2d}
    for oid in sorted(gt):
        parts.append(_gt_rect(gt[oid], cam, oid))
    for oid in sorted(before):
        g = _wireframe_group(cam, before[oid], oid, "before", BEFORE_COLOR)
        if g:
            parts.append(g)
    for oid in sorted(after):
        g = _wireframe_group(cam, after[oid], oid, "after", AFTER_COLOR)
        if g:
            parts.append(g)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
