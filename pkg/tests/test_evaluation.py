import copy

import pytest

from app.dataset import SynthConfig, generate
from app.dataset.synth import PoseNoise
from app.errors import MismatchedObjects
from app.evaluation import (
    AVERAGE,
    RECALL_THRESHOLDS,
    dumps_report,
    evaluate,
    format_table,
    gt_from_frames,
    gt_from_truth,
    report_to_flat,
)
from app.pipeline import RefineOptions, refine_dataset


@pytest.fixture(scope="module")
def planted():
    cfg = SynthConfig(seed=9, n_frames=3, objects_per_frame=4, pose_noise=PoseNoise(translation=0, yaw=0),
                      gt2d_fraction=1.0)
    return generate(cfg)


def test_unchanged_boxes_report_no_gain(planted):
    frames, truth = planted
    report = evaluate(frames, copy.deepcopy(frames), gt_from_truth(truth))
    avg = report.average
    assert avg.count == len(truth) == report.n_evaluated
    assert avg.avg_iou_after == pytest.approx(avg.avg_iou_before)
    assert avg.recall_after == avg.recall_before
    assert avg.mean_bev_iou == pytest.approx(1.0)
    assert avg.mean_iou_3d == pytest.approx(1.0)


def test_columns_follow_rig_order(planted):
    frames, truth = planted
    report = evaluate(frames, frames, gt_from_truth(truth))
    rig = [c.name for c in frames[0].cameras]
    names = list(report.columns)
    assert names[-1] == AVERAGE
    assert names[:-1] == [n for n in rig if n in names]
    assert sum(report.columns[n].count for n in names[:-1]) == report.average.count


def test_recall_is_monotone(planted):
    frames, truth = planted
    col = evaluate(frames, frames, gt_from_truth(truth)).average
    values = [col.recall_before[t] for t in RECALL_THRESHOLDS]
    assert values == sorted(values, reverse=True)


def test_refinement_improves_planted_scenes(planted):
    frames, truth = planted
    after, _ = refine_dataset(frames, RefineOptions())
    avg = evaluate(frames, after, gt_from_truth(truth)).average
    assert avg.avg_iou_after > avg.avg_iou_before
    assert avg.mean_bev_iou < 1.0


def test_empty_dataset():
    report = evaluate([], [], [])
    assert report.n_objects == 0
    assert report.average.count == 0
    assert "Avg. IoU" in format_table(report)
    assert report_to_flat(report)["average.count"] == 0


def test_mismatched_objects(planted):
    frames, truth = planted
    after = copy.deepcopy(frames)
    dropped = after[0].objects.pop()
    with pytest.raises(MismatchedObjects, match=dropped.object_id):
        evaluate(frames, after, gt_from_truth(truth))


def test_gt_from_frames_uses_stored_boxes(planted):
    frames, truth = planted
    gt = gt_from_frames(frames)
    assert len(gt) == len(truth)
    assert {(g[0], g[1]) for g in gt} == {(t.frame_id, t.object_id) for t in truth}


def test_report_output_is_stable(planted):
    frames, truth = planted
    a = dumps_report(evaluate(frames, frames, gt_from_truth(truth)))
    b = dumps_report(evaluate(frames, frames, gt_from_truth(truth), clamp=False))
    assert a == b
    assert '"average.recall_0.7_before"' in a


def test_table_layout(planted):
    frames, truth = planted
    text = format_table(evaluate(frames, frames, gt_from_truth(truth)), title="synthetic")
    lines = text.splitlines()
    assert lines[0] == "synthetic"
    assert "Avg." in lines[1]
    for t in RECALL_THRESHOLDS:
        assert f"Recall(IoU >= {t:.1f})" in text
    assert sum(1 for ln in lines if "Original" in ln) == 1 + len(RECALL_THRESHOLDS)
