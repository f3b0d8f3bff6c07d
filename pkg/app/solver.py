# app/solver.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from .anchor import (
    IDENTITY,
    PARAM_HIGH,
    PARAM_LOW,
    AnchorSpec,
    RefineParams,
    advance_spec,
    apply_refinement,
    spec_for_camera,
)
from .errors import (
    EmptyBatch,
    EntirelyBehindCamera,
    NonFiniteObjective,
    NoTarget,
    SolverError,
)
from .geometry import Box2D, Box3D, CameraModel, EdgeLegality, iou_2d, project_box

logger = logging.getLogger(__name__)

BEHIND_CAMERA_PENALTY = 1e9
BOUND_MARGIN = 1e-6

METHODS = ("nelder-mead", "cobyla")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 2.0
    lambda2: float = 3.0
    lambda3: float = 1.0
    huber_delta: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise SolverError("loss weights must be non-negative")
        if self.huber_delta <= 0:
            raise SolverError("huber_delta must be positive")


@dataclass(frozen=True)
class SolverConfig:
    lower_bound: float = 0.0
    upper_bound: float = 2.0
    max_iter: int = 1000
    simplex_step: float = 0.05
    f_tol: float = 1e-8
    x_tol: float = 1e-8
    restarts: int = 1
    method: str = "nelder-mead"

    def __post_init__(self):
        if not (self.lower_bound < 1.0 < self.upper_bound):
            raise SolverError(f"bounds must satisfy lower < 1 < upper, got {self.lower_bound}, {self.upper_bound}")
        if self.lower_bound < PARAM_LOW or self.upper_bound > PARAM_HIGH:
            raise SolverError(f"bounds must lie within [{PARAM_LOW}, {PARAM_HIGH}]")
        if self.max_iter < 1:
            raise SolverError("max_iter must be >= 1")
        if self.restarts < 1:
            raise SolverError("restarts must be >= 1")
        if self.simplex_step <= 0:
            raise SolverError("simplex_step must be positive")
        if self.method not in METHODS:
            raise SolverError(f"unknown solver {self.method!r}, expected one of {METHODS}")

    @property
    def clip_low(self) -> float:
        return self.lower_bound + BOUND_MARGIN

    @property
    def clip_high(self) -> float:
        return self.upper_bound - BOUND_MARGIN


@dataclass(frozen=True)
class RefineResult:
    params: RefineParams
    refined_box: Box3D
    iou_before: float
    iou_after: float
    objective_value: float
    iterations: int
    converged: bool
    guarded: bool = False
    category: Optional[int] = None

    def to_record(self) -> Dict[str, object]:
        b = self.refined_box
        return {
            "params": self.params.as_list(),
            "refined_box": {"x": b.x, "y": b.y, "z": b.z, "l": b.l, "w": b.w, "h": b.h, "yaw": b.yaw},
            "iou_before": self.iou_before,
            "iou_after": self.iou_after,
            "objective_value": self.objective_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "guarded": self.guarded,
            "category": self.category,
        }


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    evaluations: int = 0
    history: List[float] = field(default_factory=list)


# ---------------- losses ----------------

def huber(r: Union[float, np.ndarray], delta: float) -> Union[float, np.ndarray]:
    if delta <= 0:
        raise SolverError("huber delta must be positive")
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * np.square(r), delta * (a - 0.5 * delta))
    if np.ndim(out) == 0:
        return float(out)
    return out


def huber_grad(r: Union[float, np.ndarray], delta: float) -> Union[float, np.ndarray]:
    out = np.where(np.abs(r) <= delta, r, delta * np.sign(r))
    if np.ndim(out) == 0:
        return float(out)
    return out


def loss_2d(pred: Sequence[Box2D], target: Sequence[Box2D], delta: float = 1.0) -> float:
    if len(pred) != len(target):
        raise SolverError(f"loss_2d: {len(pred)} predictions vs {len(target)} targets")
    if not pred:
        raise EmptyBatch("loss_2d needs at least one box")
    total = 0.0
    for p, t in zip(pred, target):
        total += float(np.sum(huber(p.as_array() - t.as_array(), delta)))
    return total / len(pred)


def loss_3d(
    proj: Sequence[Tuple[Box2D, EdgeLegality]],
    gt: Sequence[Optional[Box2D]],
    pseudo: Sequence[Optional[Box2D]],
    delta: float = 1.0,
) -> float:
    """Legality-masked edge loss; gt wins over the pseudo target when both exist."""
    if not (len(proj) == len(gt) == len(pseudo)):
        raise SolverError("loss_3d: projection, gt and pseudo lists differ in length")
    if not proj:
        raise EmptyBatch("loss_3d needs at least one box")
    total = 0.0
    for i, ((box, legal), g, p) in enumerate(zip(proj, gt, pseudo)):
        target = g if g is not None else p
        if target is None:
            raise NoTarget(f"loss_3d: element {i} has neither gt nor pseudo target")
        res = huber(box.as_array() - target.as_array(), delta)
        total += float(np.sum(np.where(legal.as_mask(), res, 0.0)))
    return total / len(proj)


def loss_consistency(d: RefineParams, d_prime: RefineParams, d_aug: RefineParams, delta: float = 1.0) -> float:
    return float(np.sum(huber(d.as_array() - d_prime.as_array() * d_aug.as_array(), delta)))


def loss_total(e2d: float, e3d: float, econ: float, has_gt: bool, w: LossWeights = LossWeights()) -> float:
    gated = w.lambda1 * e2d if has_gt else 0.0
    return gated + w.lambda2 * e3d + w.lambda3 * econ


# ---------------- objective ----------------

def objective(
    b: Box3D,
    spec: AnchorSpec,
    cam: CameraModel,
    target: Box2D,
    d: RefineParams,
    delta: float = 1.0,
) -> float:
    refined = apply_refinement(b, spec, d)
    try:
        box, legal = project_box(cam, refined)
    except EntirelyBehindCamera:
        return BEHIND_CAMERA_PENALTY
    res = huber(box.as_array() - target.as_array(), delta)
    return float(np.sum(np.where(legal.as_mask(), res, 0.0)))


# ---------------- optimizers ----------------

def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
) -> NelderMeadResult:
    """Bounded Nelder-Mead; every candidate is clipped into the bounds before evaluation."""
    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    lo, hi = cfg.clip_low, cfg.clip_high
    evaluations = 0

    def clip(x):
        return np.clip(x, lo, hi)

    def ev(x):
        nonlocal evaluations
        evaluations += 1
        val = float(f(x))
        if math.isnan(val):
            raise NonFiniteObjective(f"objective returned NaN at {x.tolist()}")
        return val

    start = clip(np.asarray(x0, dtype=np.float64))
    dim = start.shape[0]
    total_iters = 0
    converged = False
    history: List[float] = []

    for _restart in range(cfg.restarts):
        sim = [start]
        for i in range(dim):
            v = start.copy()
            v[i] += cfg.simplex_step
            if v[i] > hi:
                v[i] = start[i] - cfg.simplex_step
            sim.append(clip(v))
        sim = np.array(sim)
        fsim = np.array([ev(v) for v in sim])

        iters = 0
        converged = False
        while True:
            order = np.argsort(fsim, kind="stable")
            sim, fsim = sim[order], fsim[order]
            history.append(float(fsim[0]))
            x_spread = float(np.max(np.abs(sim[1:] - sim[0])))
            f_spread = float(np.max(np.abs(fsim[1:] - fsim[0])))
            if x_spread <= cfg.x_tol and f_spread <= cfg.f_tol:
                converged = True
                break
            if iters >= cfg.max_iter:
                break
            iters += 1

            centroid = sim[:-1].mean(axis=0)
            worst = sim[-1]

            xr = clip(centroid + alpha * (centroid - worst))
            fr = ev(xr)
            if fr < fsim[0]:
                xe = clip(centroid + gamma * (xr - centroid))
                fe = ev(xe)
                if fe < fr:
                    sim[-1], fsim[-1] = xe, fe
                else:
                    sim[-1], fsim[-1] = xr, fr
                continue
            if fr < fsim[-2]:
                sim[-1], fsim[-1] = xr, fr
                continue

            if fr < fsim[-1]:
                xc = clip(centroid + rho * (xr - centroid))
                fc = ev(xc)
                if fc <= fr:
                    sim[-1], fsim[-1] = xc, fc
                    continue
            else:
                xc = clip(centroid + rho * (worst - centroid))
                fc = ev(xc)
                if fc < fsim[-1]:
                    sim[-1], fsim[-1] = xc, fc
                    continue

            best = sim[0]
            for k in range(1, dim + 1):
                sim[k] = clip(best + sigma * (sim[k] - best))
                fsim[k] = ev(sim[k])

        total_iters += iters
        start = sim[0].copy()
        best_f = float(fsim[0])

    return NelderMeadResult(
        x=start, fun=best_f, iterations=total_iters, converged=converged,
        evaluations=evaluations, history=history,
    )


def cobyla(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
) -> NelderMeadResult:
    """scipy COBYLA with the bounds as inequality constraints; result clipped into bounds."""
    lo, hi = cfg.clip_low, cfg.clip_high
    constraints = [
        {"type": "ineq", "fun": lambda x: x - lo},
        {"type": "ineq", "fun": lambda x: hi - x},
    ]
    res = minimize(
        lambda x: float(f(np.clip(x, lo, hi))),
        np.clip(np.asarray(x0, dtype=np.float64), lo, hi),
        method="COBYLA",
        constraints=constraints,
        options={"maxiter": cfg.max_iter, "rhobeg": cfg.simplex_step},
    )
    x = np.clip(res.x, lo, hi)
    fun = float(f(x))
    if math.isnan(fun):
        raise NonFiniteObjective(f"objective returned NaN at {x.tolist()}")
    nfev = int(getattr(res, "nfev", 0))
    return NelderMeadResult(x=x, fun=fun, iterations=nfev, converged=bool(res.success), evaluations=nfev)


_OPTIMIZERS = {"nelder-mead": nelder_mead, "cobyla": cobyla}


# ---------------- refinement ----------------

def refine_with_spec(
    b: Box3D,
    spec: AnchorSpec,
    cam: CameraModel,
    target: Box2D,
    cfg: SolverConfig = SolverConfig(),
    delta: float = 1.0,
) -> RefineResult:
    before, _ = project_box(cam, b)
    iou_before = iou_2d(before, target)

    def f(x: np.ndarray) -> float:
        return objective(b, spec, cam, target, RefineParams.from_array(x), delta)

    opt = _OPTIMIZERS[cfg.method](f, IDENTITY.as_array(), cfg)
    params = RefineParams.from_array(opt.x)
    refined = apply_refinement(b, spec, params)
    try:
        after, _ = project_box(cam, refined)
        iou_after = iou_2d(after, target)
    except EntirelyBehindCamera:
        iou_after = -1.0

    # no strict IoU gain: keep the input box
    guarded = False
    if not iou_after > iou_before and params != IDENTITY:
        logger.debug("guard: iou %.4f -> %.4f, keeping input box", iou_before, iou_after)
        params, refined, iou_after, guarded = IDENTITY, b, iou_before, True

    return RefineResult(
        params=params,
        refined_box=refined,
        iou_before=iou_before,
        iou_after=iou_after,
        objective_value=objective(b, spec, cam, target, params, delta),
        iterations=opt.iterations,
        converged=opt.converged,
        guarded=guarded,
        category=spec.category.index,
    )


def refine_box(
    b: Box3D,
    cam: CameraModel,
    target: Optional[Box2D],
    cfg: SolverConfig = SolverConfig(),
    delta: float = 1.0,
    pseudo: Optional[Box2D] = None,
) -> RefineResult:
    """Solve D for one box against a gt 2D box, or against a pseudo target when gt is absent."""
    goal = target if target is not None else pseudo
    if goal is None:
        raise NoTarget("refine_box needs a gt or pseudo target")
    spec = spec_for_camera(b, cam)
    return refine_with_spec(b, spec, cam, goal, cfg, delta)


def consistency_error(
    b: Box3D,
    cam: CameraModel,
    target: Box2D,
    d_aug: RefineParams,
    cfg: SolverConfig = SolverConfig(),
    delta: float = 1.0,
) -> Tuple[RefineResult, RefineResult, float]:
    """Refine the box and its augmented copy; a robust solve gives D = D' * D_aug."""
    spec = spec_for_camera(b, cam)
    plain = refine_with_spec(b, spec, cam, target, cfg, delta)
    augmented = apply_refinement(b, spec, d_aug)
    aug = refine_with_spec(augmented, advance_spec(spec, d_aug), cam, target, cfg, delta)
    return plain, aug, loss_consistency(plain.params, aug.params, d_aug, delta)
