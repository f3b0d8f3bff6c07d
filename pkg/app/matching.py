# app/matching.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CuboidError, NonFiniteCost
from .geometry import Box2D, Box3D, CameraModel, iou_2d, project_box

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.3


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    unmatched_proposals: List[int] = field(default_factory=list)
    unmatched_gt: List[int] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    @property
    def total_iou(self) -> float:
        return float(sum(p[2] for p in self.pairs))


def _optimum(c: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> Tuple[int, float]:
    """(pair count, cost) of the best assignment of the rows x cols sub-matrix."""
    if not rows or not cols:
        return 0, 0.0
    sub = c[np.ix_(rows, cols)]
    r, k = linear_sum_assignment(sub)
    return len(r), float(sub[r, k].sum())


def hungarian(cost: np.ndarray) -> Tuple[List[Tuple[int, int]], float]:
    """Minimum-cost assignment of min(n, m) pairs, sorted by (row, col).

    Among assignments of equal total cost the lexicographically smallest
    sorted pair list wins: rows are fixed in order, each to the lowest
    column that still admits an optimal completion.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise NonFiniteCost(f"cost matrix must be 2-D and non-empty, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NonFiniteCost("cost matrix contains NaN or infinite entries")
    n, m = c.shape
    k, best = _optimum(c, list(range(n)), list(range(m)))
    tol = 1e-12 * max(1.0, abs(best))

    pairs: List[Tuple[int, int]] = []
    fixed = 0.0
    free_cols = list(range(m))
    for i in range(n):
        if len(pairs) == k:
            break
        later = list(range(i + 1, n))
        for j in free_cols:
            rest = [col for col in free_cols if col != j]
            count, sub = _optimum(c, later, rest)
            if len(pairs) + 1 + count == k and fixed + c[i, j] + sub <= best + tol:
                pairs.append((i, j))
                fixed += c[i, j]
                free_cols = rest
                break
        # no column fits: row i stays unassigned in every optimum
    total = float(sum(c[i, j] for i, j in pairs))
    return pairs, total


def match_frame(
    proposals: Sequence[Box3D],
    cam: CameraModel,
    gt: Sequence[Box2D],
    threshold: float = DEFAULT_THRESHOLD,
) -> MatchResult:
    """Hungarian on 1 - IoU of projected proposals vs gt, gated after assignment."""
    projected: List[Optional[Box2D]] = []
    for b in proposals:
        try:
            projected.append(project_box(cam, b)[0])
        except CuboidError:
            projected.append(None)

    valid = [i for i, p in enumerate(projected) if p is not None]
    result = MatchResult(threshold=threshold)
    if not valid or not gt:
        result.unmatched_proposals = list(range(len(proposals)))
        result.unmatched_gt = list(range(len(gt)))
        return result

    iou = np.array([[iou_2d(projected[i], g) for g in gt] for i in valid])
    pairs, _ = hungarian(1.0 - iou)

    matched_p, matched_g = set(), set()
    for r, j in pairs:
        v = float(iou[r, j])
        if v >= threshold:
            result.pairs.append((valid[r], j, v))
            matched_p.add(valid[r])
            matched_g.add(j)
    result.unmatched_proposals = [i for i in range(len(proposals)) if i not in matched_p]
    result.unmatched_gt = [j for j in range(len(gt)) if j not in matched_g]
    logger.debug("camera %s: %d pairs, %d/%d unmatched", cam.name, len(result.pairs),
                 len(result.unmatched_proposals), len(result.unmatched_gt))
    return result
