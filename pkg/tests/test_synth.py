import numpy as np
import pytest

from ov3d.geometry import iou3d, points_in_box
from ov3d.scene import project_points
from ov3d.synth import SynthSpec, generate_scene, make_camera, write_dataset


def test_noiseless_points_inside_gt():
    spec = SynthSpec(objects_per_scene=(1, 1), noise_sigma=0.0, clutter_fraction=0.0, seed=5)
    scene, gt, boxes2d = generate_scene(spec, 0)
    assert len(gt) == 1 and len(boxes2d) == 1
    assert points_in_box(gt[0].box, scene.cloud.points, slack=1e-9).all()


def test_deterministic_per_seed_and_index():
    spec = SynthSpec(seed=9)
    a, b = generate_scene(spec, 3), generate_scene(spec, 3)
    assert a == b
    assert not np.array_equal(generate_scene(spec, 4)[0].cloud.points, a[0].cloud.points)
    assert not np.array_equal(generate_scene(SynthSpec(seed=10), 3)[0].cloud.points, a[0].cloud.points)


@pytest.mark.parametrize("index", range(8))
def test_gt_disjoint_and_2d_boxes_cover_points(index):
    spec = SynthSpec(noise_sigma=0.0, clutter_fraction=0.0, max_yaw=0.8, seed=1)
    scene, gt, boxes2d = generate_scene(spec, index)
    for i in range(len(gt)):
        for j in range(i + 1, len(gt)):
            assert iou3d(gt[i].box, gt[j].box) == 0.0
    pts = scene.cloud.points
    uv, _, _ = project_points(scene.camera, pts)
    for g, b in zip(gt, boxes2d):
        own = points_in_box(g.box, pts, slack=1e-9)
        inside = ((uv[own, 0] >= b.x1) & (uv[own, 0] <= b.x2) & (uv[own, 1] >= b.y1) & (uv[own, 1] <= b.y2))
        assert inside.mean() >= 0.99
        assert b.phrase == g.category


def test_room_in_view():
    spec = SynthSpec()
    cam = make_camera(spec)
    lo, hi = np.array(spec.room[0]), np.array(spec.room[1])
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    uv, depth, valid = project_points(cam, corners)
    assert valid.all() and (depth > 0).all()
    assert (uv[:, 0] >= 0).all() and (uv[:, 0] <= spec.width).all()
    assert (uv[:, 1] >= 0).all() and (uv[:, 1] <= spec.height).all()


def test_clutter_fraction():
    spec = SynthSpec(clutter_fraction=0.2, objects_per_scene=(3, 3))
    scene, gt, _ = generate_scene(spec, 0)
    in_obj = np.zeros(len(scene.cloud), bool)
    for g in gt:
        in_obj |= points_in_box(g.box, scene.cloud.points, slack=0.05)
    assert abs((~in_obj).mean() - 0.2) < 0.03


def test_crowded_room_drops_objects(caplog):
    spec = SynthSpec(objects_per_scene=(6, 6), room=((0, 0, 0), (2.0, 2.0, 2.0)),
                     footprint_range=(0.8, 0.9), min_gap=0.3)
    scene, gt, _ = generate_scene(spec, 0)
    assert len(gt) < 6
    assert "could not place" in caplog.text


def test_spec_validation_and_dict_round_trip():
    with pytest.raises(ValueError):
        SynthSpec(room=((0, 0, 0), (0, 1, 1)))
    with pytest.raises(ValueError):
        SynthSpec(clutter_fraction=1.0)
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"bogus": 1})
    spec = SynthSpec(seed=3, n_scenes=7)
    assert SynthSpec.from_dict(spec.to_dict()) == spec


def test_thread_count_does_not_change_output(tmp_path):
    spec = SynthSpec(n_scenes=6, seed=2)
    write_dataset(spec, tmp_path / "a", threads=1)
    write_dataset(spec, tmp_path / "b", threads=4)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
