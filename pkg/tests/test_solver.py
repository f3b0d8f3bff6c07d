import math
import time

import numpy as np
import pytest

from app.anchor import IDENTITY, RefineParams, apply_refinement, spec_for_camera
from app.dataset.synth import PoseNoise, SynthConfig, generate
from app.errors import EmptyBatch, NonFiniteObjective, NoTarget, SolverError
from app.geometry import Box2D, Box3D, EdgeLegality, iou_3d, iou_bev, project_box
from app.solver import (
    BEHIND_CAMERA_PENALTY,
    LossWeights,
    SolverConfig,
    cobyla,
    consistency_error,
    huber,
    huber_grad,
    loss_2d,
    loss_3d,
    loss_consistency,
    loss_total,
    nelder_mead,
    objective,
    refine_box,
)
from conftest import random_box_in_view, random_camera


def _planted_cases(seed: int, n_frames: int, per_frame: int):
    cfg = SynthConfig(
        seed=seed,
        n_frames=n_frames,
        objects_per_frame=per_frame,
        pose_noise=PoseNoise(translation=0.0, yaw=0.0),
        gt2d_fraction=1.0,
    )
    frames, truth = generate(cfg)
    by_id = {f.frame_id: f for f in frames}
    for t in truth:
        frame = by_id[t.frame_id]
        yield frame.object(t.object_id).box3d, frame.camera(t.camera), t


# ---------------- losses ----------------

def test_huber_values():
    assert huber(0.5, 1.0) == pytest.approx(0.125)
    assert huber(2.0, 1.0) == pytest.approx(1.5)
    assert huber(-2.0, 1.0) == pytest.approx(1.5)
    assert huber(3.0, 0.5) == pytest.approx(1.375)
    np.testing.assert_allclose(huber(np.array([0.0, 1.0, -4.0]), 1.0), [0.0, 0.5, 3.5])
    with pytest.raises(SolverError):
        huber(1.0, 0.0)


def test_huber_gradient_matches_finite_differences():
    step = 1e-6
    for r in np.linspace(-3.0, 3.0, 121):
        if abs(abs(r) - 1.0) < 1e-3:
            continue
        numeric = (huber(r + step, 1.0) - huber(r - step, 1.0)) / (2 * step)
        assert huber_grad(r, 1.0) == pytest.approx(numeric, abs=1e-5)


def test_loss_2d():
    a = Box2D(0, 0, 10, 10)
    assert loss_2d([a], [a]) == 0.0
    assert loss_2d([a], [Box2D(0.5, 0.5, 10.5, 10.5)]) == pytest.approx(0.5)
    assert loss_2d([a, a], [a, Box2D(0.5, 0.5, 10.5, 10.5)]) == pytest.approx(0.25)
    with pytest.raises(EmptyBatch):
        loss_2d([], [])


def test_loss_3d_masks_illegal_edges(rng):
    for _ in range(100):
        n = int(rng.integers(1, 6))
        proj, gt, expected = [], [], 0.0
        for _ in range(n):
            lo = rng.uniform(0, 100, size=2)
            box = Box2D(lo[0], lo[1], lo[0] + rng.uniform(1, 50), lo[1] + rng.uniform(1, 50))
            t_lo = lo + rng.normal(0, 3, size=2)
            target = Box2D(t_lo[0], t_lo[1], t_lo[0] + rng.uniform(1, 50), t_lo[1] + rng.uniform(1, 50))
            legal = EdgeLegality(*(bool(v) for v in rng.integers(0, 2, size=4)))
            mask = [legal.left, legal.top, legal.right, legal.bottom]
            for on, p, t in zip(mask, box.as_array(), target.as_array()):
                if on:
                    expected += huber(p - t, 1.0)
            proj.append((box, legal))
            gt.append(target)
        assert loss_3d(proj, gt, [None] * n) == pytest.approx(expected / n)


def test_loss_3d_edge_cases():
    box = Box2D(0, 0, 10, 10)
    off = Box2D(5, 5, 20, 20)
    none_legal = EdgeLegality(False, False, False, False)
    assert loss_3d([(box, none_legal)], [off], [None]) == 0.0
    assert loss_3d([(box, EdgeLegality())], [box], [None]) == 0.0
    # gt wins over pseudo
    assert loss_3d([(box, EdgeLegality())], [box], [off]) == 0.0
    assert loss_3d([(box, EdgeLegality())], [None], [off]) > 0.0
    with pytest.raises(NoTarget):
        loss_3d([(box, EdgeLegality())], [None], [None])
    with pytest.raises(EmptyBatch):
        loss_3d([], [], [])


def test_loss_consistency():
    d_prime = RefineParams(0.9, 1.1, 0.8, 1.2)
    d_aug = RefineParams(1.1, 0.9, 1.2, 1.05)
    composed = RefineParams.from_array(d_prime.as_array() * d_aug.as_array())
    assert loss_consistency(composed, d_prime, d_aug) == 0.0
    assert loss_consistency(IDENTITY, IDENTITY, RefineParams(1.5, 1, 1, 1)) == pytest.approx(0.125)


def test_loss_total():
    assert loss_total(0.0, 0.0, 0.0, True) == 0.0
    assert loss_total(1.0, 1.0, 1.0, True) == pytest.approx(6.0)
    assert loss_total(1.0, 1.0, 1.0, False) == pytest.approx(4.0)
    assert loss_total(5.0, 1.0, 0.0, False) == loss_total(0.0, 1.0, 0.0, False)
    assert loss_total(1.0, 0.0, 0.0, True, LossWeights(lambda1=0.5)) == pytest.approx(0.5)
    with pytest.raises(SolverError):
        LossWeights(lambda1=-1.0)


# ---------------- objective ----------------

def test_objective_zero_at_planted_params(rng):
    for _ in range(100):
        cam = random_camera(rng)
        b = random_box_in_view(rng, cam)
        spec = spec_for_camera(b, cam)
        d = RefineParams.from_array(rng.uniform(0.7, 1.3, size=4))
        target, _ = project_box(cam, apply_refinement(b, spec, d))
        assert objective(b, spec, cam, target, d) == 0.0
        assert objective(b, spec, cam, target, IDENTITY) >= 0.0


def test_objective_identity_target(rng):
    cam = random_camera(rng)
    b = random_box_in_view(rng, cam)
    target, _ = project_box(cam, b)
    assert objective(b, spec_for_camera(b, cam), cam, target, IDENTITY) == pytest.approx(0.0, abs=1e-12)


def test_objective_behind_camera_penalty(origin_camera):
    b = Box3D(-10, 0, 0, 4, 2, 2, 0)
    spec = spec_for_camera(b, origin_camera)
    assert objective(b, spec, origin_camera, Box2D(0, 0, 10, 10), IDENTITY) == BEHIND_CAMERA_PENALTY


# ---------------- optimizers ----------------

def _quadratic(center):
    return lambda x: float(np.sum((np.asarray(x) - center) ** 2))


def test_solver_config_validation():
    with pytest.raises(SolverError):
        SolverConfig(lower_bound=0.5, upper_bound=0.9)
    with pytest.raises(SolverError):
        SolverConfig(lower_bound=-1.0)
    with pytest.raises(SolverError):
        SolverConfig(method="bfgs")
    with pytest.raises(SolverError):
        SolverConfig(max_iter=0)


def test_nelder_mead_start_at_optimum():
    res = nelder_mead(_quadratic(1.0), [1.0] * 4)
    assert res.converged
    np.testing.assert_allclose(res.x, 1.0, atol=1e-6)
    assert res.fun < 1e-10


def test_nelder_mead_interior_minimum():
    res = nelder_mead(_quadratic(1.2), [1.0] * 4)
    np.testing.assert_allclose(res.x, 1.2, atol=1e-4)
    assert res.history == sorted(res.history, reverse=True)


def test_nelder_mead_bound_activation():
    res = nelder_mead(_quadratic(3.0), [1.0] * 4)
    np.testing.assert_allclose(res.x, 2.0 - 1e-6, atol=1e-4)


def test_nelder_mead_never_leaves_bounds():
    cfg = SolverConfig(lower_bound=0.5, upper_bound=1.5)
    seen = []

    def f(x):
        seen.append(np.array(x))
        return float(np.sum((np.asarray(x) - np.array([3.0, -1.0, 1.0, 0.0])) ** 2))

    nelder_mead(f, [1.0] * 4, cfg)
    pts = np.array(seen)
    assert np.all(pts >= cfg.clip_low) and np.all(pts <= cfg.clip_high)


def test_nelder_mead_nan_raises():
    with pytest.raises(NonFiniteObjective):
        nelder_mead(lambda x: float("nan"), [1.0] * 4)


def test_nelder_mead_iteration_cap():
    res = nelder_mead(_quadratic(1.2), [1.0] * 4, SolverConfig(max_iter=1))
    assert not res.converged
    assert res.iterations == 1


def test_nelder_mead_restarts_do_not_hurt():
    f = lambda x: float(np.sum(np.abs(np.asarray(x) - 0.8)) + np.sum((np.asarray(x) - 1.1) ** 2))
    once = nelder_mead(f, [1.0] * 4, SolverConfig(max_iter=50))
    again = nelder_mead(f, [1.0] * 4, SolverConfig(max_iter=50, restarts=3))
    assert again.fun <= once.fun


def test_nelder_mead_deterministic():
    a = nelder_mead(_quadratic(1.2), [1.0] * 4)
    b = nelder_mead(_quadratic(1.2), [1.0] * 4)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_cobyla_interior_minimum():
    res = cobyla(_quadratic(1.2), [1.0] * 4, SolverConfig(method="cobyla"))
    np.testing.assert_allclose(res.x, 1.2, atol=1e-3)


# ---------------- refine_box ----------------

def test_refine_box_already_aligned(rng):
    cam = random_camera(rng)
    b = random_box_in_view(rng, cam)
    target, _ = project_box(cam, b)
    res = refine_box(b, cam, target)
    assert res.iou_after >= res.iou_before
    assert res.iou_after > 0.999
    np.testing.assert_allclose(res.params.as_array(), 1.0, atol=0.05)


def test_refine_box_guard_keeps_input(rng):
    cam = random_camera(rng)
    b = random_box_in_view(rng, cam)
    far = Box2D(1e5, 1e5, 1e5 + 10, 1e5 + 10)
    res = refine_box(b, cam, far)
    assert res.params == IDENTITY
    assert res.refined_box == b
    assert res.iou_before == res.iou_after == 0.0


def test_refine_box_never_lowers_iou(rng):
    for _ in range(15):
        cam = random_camera(rng)
        b = random_box_in_view(rng, cam)
        proj, _ = project_box(cam, b)
        j = rng.uniform(-10, 10, size=4)
        target = Box2D(proj.x_min + j[0], proj.y_min + j[1], proj.x_max + j[2], proj.y_max + j[3])
        res = refine_box(b, cam, target)
        assert res.iou_after >= res.iou_before
        assert res.refined_box.yaw == b.yaw


def test_refine_box_needs_a_target(rng):
    cam = random_camera(rng)
    b = random_box_in_view(rng, cam)
    with pytest.raises(NoTarget):
        refine_box(b, cam, None)
    proj, _ = project_box(cam, b)
    res = refine_box(b, cam, None, pseudo=proj)
    assert res.iou_after >= res.iou_before


def test_refine_box_deterministic(rng):
    cam = random_camera(rng)
    b = random_box_in_view(rng, cam)
    spec = spec_for_camera(b, cam)
    target, _ = project_box(cam, apply_refinement(b, spec, RefineParams(0.8, 1.2, 1.1, 0.9)))
    assert refine_box(b, cam, target) == refine_box(b, cam, target)


def test_refine_box_record():
    cam_box = next(_planted_cases(3, 1, 1))
    b, cam, t = cam_box
    rec = refine_box(b, cam, t.true_box2d).to_record()
    assert set(rec) >= {"params", "refined_box", "iou_before", "iou_after", "objective_value", "converged"}
    assert len(rec["params"]) == 4


def _recovery(cases, cfg=SolverConfig()):
    """IoU before and after per object, plus BEV and 3D IoU of input vs refined box."""
    rows = []
    for b, cam, t in cases:
        res = refine_box(b, cam, t.true_box2d, cfg)
        rows.append((res.iou_before, res.iou_after, iou_bev(b, res.refined_box), iou_3d(b, res.refined_box)))
    return tuple(np.array(col) for col in zip(*rows))


def test_planted_recovery_small():
    before, after, bev, vol = _recovery(_planted_cases(11, 8, 5))
    assert len(after) >= 30
    assert np.mean(after >= 0.95) >= 0.9
    assert np.mean(after) - np.mean(before) >= 0.10
    # refined boxes stay close to the input
    assert np.mean(bev) >= 0.6
    assert np.mean(vol) >= 0.5


def test_planted_recovery_cobyla():
    before, after, _, _ = _recovery(_planted_cases(5, 2, 5), SolverConfig(method="cobyla"))
    assert np.all(after >= before)


@pytest.mark.slow
def test_planted_recovery_full():
    cases = list(_planted_cases(0, 100, 5))
    start = time.perf_counter()
    before, after, bev, vol = _recovery(cases)
    assert time.perf_counter() - start < 60.0
    assert len(after) >= 450
    assert np.mean(after >= 0.95) >= 0.9
    assert np.mean(after) - np.mean(before) >= 0.10
    assert np.mean(bev) >= 0.6
    assert np.mean(vol) >= 0.5


def test_consistency_error_on_planted_object():
    b, cam, t = next(_planted_cases(21, 1, 1))
    plain, aug, econ = consistency_error(b, cam, t.true_box2d, RefineParams(1.1, 0.9, 1.05, 0.95))
    assert math.isfinite(econ) and econ >= 0.0
    assert plain.iou_after >= plain.iou_before
    assert aug.iou_after >= aug.iou_before
