import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import canonical_partition, naive_dbscan
from ov3d.geometry import iou3d, points_in_box
from ov3d.lifting import NOISE, LiftParams, LiftRejected, dbscan, fit_box, frustum_points, lift_box
from ov3d.scene import Box2D, Box3D, CameraModel, PointCloud, Scene, project_point
from ov3d.synth import project_box

IDENTITY = CameraModel(np.hstack([np.eye(3), np.zeros((3, 1))]), 100, 100)
# camera at the origin looking down +z (x right, y down)
PINHOLE = CameraModel.pinhole(525.0, 320.0, 240.0, 640, 480)


def test_frustum_basic():
    cloud = PointCloud([[0, 0, 2], [0, 0, -2], [5, 5, 1]])
    idx = frustum_points(cloud, IDENTITY, Box2D(-1, -1, 1, 1))
    assert idx.tolist() == [0]


def test_frustum_cube_with_clutter():
    rng = np.random.default_rng(3)
    gen = Box3D((0.2, 0.1, 4.0), (0.8, 0.6, 0.7))
    inside = gen.center + (rng.random((500, 3)) - 0.5) * np.array(gen.size)
    box = project_box(PINHOLE, gen)
    clutter = []
    while len(clutter) < 50:
        p = rng.uniform([-4, -3, 1], [4, 3, 8])
        pr = project_point(PINHOLE, p)
        if not (box.x1 <= pr.u <= box.x2 and box.y1 <= pr.v <= box.y2):
            clutter.append(p)
    pts = np.vstack([clutter[:25], inside, clutter[25:]])
    idx = frustum_points(PointCloud(pts), PINHOLE, box)
    # independent per-point check
    expected = [i for i, p in enumerate(pts)
                if (pr := project_point(PINHOLE, p)).valid and pr.depth > 1e-6
                and box.x1 <= pr.u <= box.x2 and box.y1 <= pr.v <= box.y2]
    assert idx.tolist() == expected == list(range(25, 525))


def test_dbscan_blob():
    pts = np.zeros((10, 3))
    assert dbscan(pts, 0.1, 3).tolist() == [0] * 10
    pts = np.vstack([pts, [[5, 0, 0]]])
    assert dbscan(pts, 0.1, 3).tolist() == [0] * 10 + [NOISE]


def test_dbscan_two_blobs_vs_reference():
    rng = np.random.default_rng(0)
    eps = 0.1
    a = rng.normal(0, 0.02, (40, 3))
    b = rng.normal(0, 0.02, (40, 3)) + [10 * eps, 0, 0]
    pts = np.vstack([a, b])[rng.permutation(80)]
    got = dbscan(pts, eps, 5)
    assert len(set(got.tolist()) - {NOISE}) == 2
    assert canonical_partition(got) == canonical_partition(naive_dbscan(pts, eps, 5))


def test_dbscan_empty_and_min_pts_one():
    assert dbscan(np.zeros((0, 3)), 0.1, 1).tolist() == []
    assert dbscan(np.array([[0, 0, 0], [1, 0, 0]]), 0.1, 1).tolist() == [0, 1]


def test_dbscan_border_joins_first_cluster():
    # two cores chains with a shared border point in the middle
    left = [[0, 0, 0], [0.05, 0, 0], [0.1, 0, 0]]
    right = [[0.5, 0, 0], [0.45, 0, 0], [0.4, 0, 0]]
    border = [[0.25, 0, 0]]
    pts = np.array(right + border + left, float)
    got = dbscan(pts, 0.16, 3)
    ref = naive_dbscan(pts, 0.16, 3)
    assert got.tolist() == ref.tolist()
    assert got[3] == got[0]  # right chain holds index 0, so it is numbered first


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dbscan_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 120))
    pts = rng.random((n, 3)) * rng.uniform(0.3, 2)
    eps, min_pts = float(rng.uniform(0.05, 0.3)), int(rng.integers(1, 8))
    labels = dbscan(pts, eps, min_pts)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    core = (d <= eps).sum(1) >= min_pts
    # noise points have no core point within eps
    for i in np.flatnonzero(labels == NOISE):
        assert not np.any(core & (d[i] <= eps))
    # labels contiguous and every cluster has a core point
    ids = sorted(set(labels.tolist()) - {NOISE})
    assert ids == list(range(len(ids)))
    for c in ids:
        assert core[labels == c].any()
    # permutation: cores partition identically; borders land in a reachable cluster
    perm = rng.permutation(n)
    plabels = np.empty_like(labels)
    plabels[perm] = dbscan(pts[perm], eps, min_pts)
    assert canonical_partition(np.where(core, labels, -1)) == canonical_partition(np.where(core, plabels, -1))
    assert np.array_equal(labels == NOISE, plabels == NOISE)


def test_fit_axis_aligned_cube():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    b = fit_box(corners)
    assert b.center == (0.5, 0.5, 0.5) and b.size == (1.0, 1.0, 1.0) and b.yaw == 0.0


def test_fit_single_point_floor():
    b = fit_box([[1, 2, 3]])
    assert b.center == (1.0, 2.0, 3.0) and b.size == (1e-4, 1e-4, 1e-4)


def test_fit_empty_raises():
    with pytest.raises(ValueError):
        fit_box(np.zeros((0, 3)))


@pytest.mark.parametrize("deg", [30.0, 10.0, -40.0, 75.0])
def test_fit_pca_rotated_cube(deg):
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    t = math.radians(deg)
    R = np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])
    b = fit_box(corners @ R.T, "bev-pca")
    assert np.allclose(b.size, 1.0, atol=1e-6)
    diff = (b.yaw - t) % (math.pi / 2)
    assert min(diff, math.pi / 2 - diff) < 1e-6


def test_fit_pca_elongated():
    rng = np.random.default_rng(5)
    local = (rng.random((2000, 3)) - 0.5) * [2.0, 0.5, 0.8]
    t = 0.6
    R = np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])
    b = fit_box(local @ R.T + [1, 2, 3], "bev-pca")
    assert abs(b.yaw - t) < 0.05
    assert iou3d(b, Box3D((1, 2, 3), (2.0, 0.5, 0.8), t)) > 0.9


@given(st.lists(st.tuples(*[st.floats(-10, 10)] * 3), min_size=1, max_size=40))
def test_fit_contains_all(points):
    pts = np.array(points)
    b = fit_box(pts)
    assert points_in_box(b, pts, slack=1e-9).all()


def _object_scene(seed=0, offset=(0.0, 0.0, 0.0)):
    rng = np.random.default_rng(seed)
    gen = Box3D((0.3, 0.2, 5.0), (1.0, 0.8, 0.9))
    obj = np.array(gen.center) + (rng.random((800, 3)) - 0.5) * np.array(gen.size)
    box = project_box(PINHOLE, gen)
    # clutter inside the frustum but at other depths
    clutter = []
    while len(clutter) < 40:
        z = rng.uniform(1.0, 12.0)
        if abs(z - 5.0) < 1.0:
            continue
        u, v = rng.uniform(box.x1, box.x2), rng.uniform(box.y1, box.y2)
        clutter.append([(u - 320) * z / 525, (v - 240) * z / 525, z])
    pts = np.vstack([obj, clutter]) + np.array(offset)
    cam = PINHOLE
    if any(offset):
        # move the camera with the scene
        P = PINHOLE.P.copy()
        P[:, 3] -= P[:, :3] @ np.array(offset)
        cam = CameraModel(P, 640, 480)
    return Scene("s", PointCloud(pts), cam), box, gen


def test_lift_recovers_object():
    scene, box, gen = _object_scene()
    got = lift_box(scene, box, LiftParams(0.15, 10, 20))
    assert iou3d(got, gen) >= 0.7


def test_lift_rejections():
    scene, box, _ = _object_scene()
    with pytest.raises(LiftRejected) as e:
        lift_box(Scene("e", PointCloud(np.zeros((0, 3))), PINHOLE), box)
    assert e.value.reason == "empty_frustum"
    few = Scene("f", PointCloud(scene.cloud.points[:5]), PINHOLE)
    with pytest.raises(LiftRejected):
        lift_box(few, box, LiftParams(min_pts=3, min_cluster=20))
    with pytest.raises(LiftRejected) as e:
        lift_box(scene, Box2D(700, 0, 800, 10), LiftParams())
    assert e.value.reason == "out_of_frame"


def test_lift_all_noise():
    rng = np.random.default_rng(1)
    sparse = rng.uniform([-3, -2, 2], [3, 2, 10], (30, 3))
    with pytest.raises(LiftRejected) as e:
        lift_box(Scene("n", PointCloud(sparse), PINHOLE), Box2D(0, 0, 640, 480), LiftParams(0.05, 3, 3))
    assert e.value.reason == "all_noise"


def test_lift_deterministic_and_translation_equivariant():
    scene, box, _ = _object_scene()
    a = lift_box(scene, box)
    assert lift_box(scene, box) == a
    shift = (1.25, -0.5, 2.0)
    moved, _, _ = _object_scene(offset=shift)
    b = lift_box(moved, box)
    assert np.allclose(np.subtract(b.center, a.center), shift, atol=1e-9)
    assert np.allclose(b.size, a.size, atol=1e-9)


def test_lift_tie_break_prefers_median_depth():
    # two equal clusters; the frustum's median depth sits near the far one
    near = np.array([[0, 0, 2.0]]) + np.random.default_rng(0).normal(0, 0.01, (30, 3))
    far = np.array([[0, 0, 6.0]]) + np.random.default_rng(1).normal(0, 0.01, (30, 3))
    sparse = np.array([[0, 0, z] for z in np.linspace(5.0, 9.0, 9)])
    scene = Scene("t", PointCloud(np.vstack([near, far, sparse])), PINHOLE)
    b = lift_box(scene, Box2D(300, 220, 340, 260), LiftParams(0.1, 5, 10))
    assert abs(b.center[2] - 6.0) < 0.1


def test_params_validation():
    with pytest.raises(ValueError):
        LiftParams(eps=0)
    with pytest.raises(ValueError):
        LiftParams(min_pts=10, min_cluster=5)
    with pytest.raises(ValueError):
        LiftParams(fit_mode="obb")
