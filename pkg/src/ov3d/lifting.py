"""Lift 2D detection boxes to 3D pseudo-label boxes.

A 2D box selects the points whose projection falls inside it (its frustum).
Those points are clustered with DBSCAN, the dominant cluster is kept and a
tight 3D box is fitted around it. Background and clutter that happen to
project into the same 2D box end up as noise or as smaller clusters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree

from .scene import MIN_DEPTH, Box2D, Box3D, CameraModel, PointCloud, Scene, clamp_box2d, project_points, wrap_angle

NOISE = -1
MIN_EXTENT = 1e-4
FIT_MODES = ("axis-aligned", "bev-pca")


class LiftRejected(Exception):
    """A 2D box produced no pseudo-label. ``reason`` is a short machine tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class LiftParams:
    eps: float = 0.15
    min_pts: int = 10
    min_cluster: int = 20
    fit_mode: str = "axis-aligned"

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be finite and positive, got {self.eps}")
        if self.min_pts < 1 or self.min_cluster < 1:
            raise ValueError("min_pts and min_cluster must be >= 1")
        if self.min_cluster < self.min_pts:
            raise ValueError("min_cluster must be >= min_pts")
        if self.fit_mode not in FIT_MODES:
            raise ValueError(f"fit_mode must be one of {FIT_MODES}")


def frustum_points(cloud: PointCloud, cam: CameraModel, box: Box2D) -> np.ndarray:
    """Indices (ascending) of points projecting inside ``box`` with positive depth."""
    uv, depth, valid = project_points(cam, cloud.points)
    with np.errstate(invalid="ignore"):
        inside = (valid & (depth > MIN_DEPTH)
                  & (uv[:, 0] >= box.x1) & (uv[:, 0] <= box.x2)
                  & (uv[:, 1] >= box.y1) & (uv[:, 1] <= box.y2))
    return np.flatnonzero(inside)


def _neighbor_pairs(pts: np.ndarray, eps: float) -> np.ndarray:
    tree = cKDTree(pts)
    # widen the query slightly, then apply the exact distance test
    pairs = tree.query_pairs(eps * (1.0 + 1e-9), output_type="ndarray")
    if len(pairs) == 0:
        return pairs.reshape(0, 2)
    d = np.sqrt(((pts[pairs[:, 0]] - pts[pairs[:, 1]]) ** 2).sum(axis=1))
    return pairs[d <= eps]


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN with Euclidean distance.

    Returns an int array of labels, ``NOISE`` (-1) or a cluster index. The
    result equals the classic sequential algorithm scanning points in
    ascending index order: clusters are numbered by their lowest-index core
    point and a border point reachable from several clusters joins the one
    numbered first.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    pairs = _neighbor_pairs(pts, eps)
    i, j = pairs[:, 0], pairs[:, 1]
    counts = np.bincount(np.concatenate([i, j]), minlength=n) + 1  # self included
    core = counts >= min_pts
    if not core.any():
        return labels

    # components of the core-core graph are the clusters
    cc = core[i] & core[j]
    core_idx = np.flatnonzero(core)
    pos = np.full(n, -1)
    pos[core_idx] = np.arange(len(core_idx))
    m = len(core_idx)
    graph = coo_matrix((np.ones(cc.sum()), (pos[i[cc]], pos[j[cc]])), shape=(m, m))
    _, comp = connected_components(graph, directed=False)
    # renumber by lowest core index (core_idx is ascending)
    first_seen = {}
    for c in comp:
        if c not in first_seen:
            first_seen[c] = len(first_seen)
    remap = np.array([first_seen[c] for c in range(len(first_seen))])
    labels[core_idx] = remap[comp]

    # border points take the smallest cluster label among their core neighbours
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    sel = core[src] & ~core[dst]
    unset = np.iinfo(np.int64).max
    best = np.full(n, unset)
    np.minimum.at(best, dst[sel], labels[src[sel]])
    hit = best != unset
    labels[hit] = best[hit]
    return labels


def _aabb(pts: np.ndarray):
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return (lo + hi) / 2.0, np.maximum(hi - lo, MIN_EXTENT)


def _min_area_yaw(xy: np.ndarray) -> float:
    """Heading of the minimum-area enclosing rectangle (rotating calipers over hull edges)."""
    try:
        hull = xy[ConvexHull(xy).vertices]
    except Exception:
        return 0.0
    best, best_yaw = math.inf, 0.0
    for k in range(len(hull)):
        e = hull[(k + 1) % len(hull)] - hull[k]
        yaw = math.atan2(e[1], e[0])
        c, s = math.cos(yaw), math.sin(yaw)
        r = xy @ np.array([[c, -s], [s, c]])
        area = np.ptp(r[:, 0]) * np.ptp(r[:, 1])
        if area < best - 1e-12:
            best, best_yaw = area, yaw
    return best_yaw


def fit_box(points, mode: str = "axis-aligned") -> Box3D:
    """Tight box around ``points``.

    ``axis-aligned`` gives yaw 0 and the per-axis extent. ``bev-pca`` takes the
    heading from the principal axis of the xy covariance and fits the extent
    in the rotated frame. When the xy spread is isotropic the principal axis is
    undefined; the minimum-area enclosing rectangle supplies the heading then.
    Heading is reported in [-pi/2, pi/2) since a box is symmetric under pi.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot fit a box to an empty point set")
    if mode == "axis-aligned":
        c, s = _aabb(pts)
        return Box3D(tuple(c), tuple(s), 0.0)
    if mode != "bev-pca":
        raise ValueError(f"unknown fit mode {mode!r}")
    if len(pts) < 3:
        raise ValueError("bev-pca needs at least 3 points")

    xy = pts[:, :2]
    cov = np.cov(xy, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or (evals[1] - evals[0]) <= 1e-6 * evals[1]:
        yaw = _min_area_yaw(xy)
    else:
        v = evecs[:, 1]
        yaw = math.atan2(v[1], v[0])
    # box symmetry: fold heading into [-pi/2, pi/2)
    yaw = wrap_angle(2.0 * yaw) / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.column_stack([c * xy[:, 0] + s * xy[:, 1], -s * xy[:, 0] + c * xy[:, 1], pts[:, 2]])
    lc, size = _aabb(local)
    center = (c * lc[0] - s * lc[1], s * lc[0] + c * lc[1], lc[2])
    return Box3D(center, tuple(size), yaw)


def lift_box(scene: Scene, box: Box2D, params: LiftParams = LiftParams()) -> Box3D:
    """Lift one 2D box to a 3D pseudo-label. Raises :class:`LiftRejected`."""
    clamped = clamp_box2d(box, scene.camera)
    if clamped is None:
        raise LiftRejected("out_of_frame")
    idx = frustum_points(scene.cloud, scene.camera, clamped)
    if len(idx) == 0:
        raise LiftRejected("empty_frustum")
    if len(idx) < params.min_cluster:
        raise LiftRejected("too_few_points", f"{len(idx)} in frustum")
    pts = scene.cloud.points[idx]
    labels = dbscan(pts, params.eps, params.min_pts)
    if (labels == NOISE).all():
        raise LiftRejected("all_noise")

    sizes = np.bincount(labels[labels != NOISE])
    best = np.flatnonzero(sizes == sizes.max())
    if len(best) > 1:
        _, depth, _ = project_points(scene.camera, pts)
        med = np.median(depth)
        gaps = [abs(depth[labels == c].mean() - med) for c in best]
        # stable argmin keeps the lowest cluster index on exact ties
        chosen = int(best[int(np.argmin(gaps))])
    else:
        chosen = int(best[0])
    if sizes[chosen] < params.min_cluster:
        raise LiftRejected("cluster_too_small", f"{sizes[chosen]} < {params.min_cluster}")
    return fit_box(pts[labels == chosen], params.fit_mode)
