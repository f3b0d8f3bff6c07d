import copy

import pytest

from app.dataset import Frame, ObjectRecord, SynthConfig, default_rig, generate
from app.dataset.synth import PoseNoise
from app.geometry import Box3D, project_box
from app.pipeline import MATCH_KEY, REFINE_KEY, RefineOptions, match_dataset, refine_dataset


@pytest.fixture(scope="module")
def dataset():
    cfg = SynthConfig(seed=4, n_frames=2, objects_per_frame=3, pose_noise=PoseNoise(translation=0, yaw=0),
                      gt2d_fraction=1.0)
    frames, _ = generate(cfg)
    return frames


def test_match_dataset_annotates_own_gt(dataset):
    matched = match_dataset(dataset)
    assert MATCH_KEY not in dataset[0].objects[0].annotations
    for frame in matched:
        for obj in frame.objects:
            for cam_name, m in obj.annotations.get(MATCH_KEY, {}).items():
                assert cam_name in [c.name for c in frame.cameras]
                assert m["iou"] >= 0.3
                assert frame.object(m["gt_object_id"]).gt_box2d[cam_name]


def test_refine_without_targets_passes_boxes_through(dataset):
    bare = copy.deepcopy(dataset)
    for f in bare:
        for o in f.objects:
            o.gt_box2d = {}
    out, results = refine_dataset(bare)
    for f_in, f_out in zip(bare, out):
        for o_in, o_out in zip(f_in.objects, f_out.objects):
            assert o_out.box3d == o_in.box3d
            assert o_out.annotations[REFINE_KEY] == {"status": "no_target"}
    assert all(r["status"] == "no_target" for r in results)


def test_refine_records_input_box(dataset):
    out, results = refine_dataset(dataset)
    refined = [r for r in results if r["status"] == "refined"]
    assert refined
    assert [(r["frame_id"], r["object_id"]) for r in results] == sorted(
        (r["frame_id"], r["object_id"]) for r in results
    )
    for f in out:
        for o in f.objects:
            ann = o.annotations[REFINE_KEY]
            if ann["status"] == "refined":
                assert set(ann["input_box3d"]) == {"x", "y", "z", "l", "w", "h", "yaw"}
                assert ann["iou_after"] >= ann["iou_before"]


def test_refine_uses_pseudo_target_without_gt():
    cam = default_rig()[0]
    b = Box3D(15, 0.5, 0.8, 4.5, 1.9, 1.6, 0.4)
    grown = Box3D(15, 0.5, 0.8, 5.0, 2.0, 1.7, 0.4)
    pseudo, _ = project_box(cam, grown)
    frame = Frame("f0", [cam], [ObjectRecord("car", b, pseudo_box2d={"front": pseudo})])
    _, results = refine_dataset([frame])
    assert results[0]["status"] == "refined"
    assert results[0]["target_source"] == "pseudo"
    assert results[0]["iou_after"] > results[0]["iou_before"]


def test_refine_augment_adds_consistency(dataset):
    _, results = refine_dataset(dataset[:1], RefineOptions(augment=0.1, seed=3))
    done = [r for r in results if r["status"] == "refined"]
    assert done
    for r in done:
        assert len(r["d_aug"]) == 4
        assert all(0.9 <= v <= 1.1 for v in r["d_aug"])
        assert r["consistency_loss"] >= 0.0
    _, again = refine_dataset(dataset[:1], RefineOptions(augment=0.1, seed=3))
    assert again == results


def test_parallel_matches_serial(dataset):
    _, serial = refine_dataset(dataset, RefineOptions(jobs=1))
    _, parallel = refine_dataset(dataset, RefineOptions(jobs=2))
    assert parallel == serial
