"""Synthetic indoor scenes with exact ground truth.

Each scene is a box-shaped room holding a few non-overlapping objects that
rest on the floor. Objects are sampled as uniform interior points with
Gaussian jitter; uniform room clutter is added on top. A pinhole camera
(SUN RGB-D-like intrinsics) looks into the room from outside, slightly from
above, and the 2D box of each object is the clipped bounding rectangle of
its projected corners.

Every scene is a pure function of ``(seed, index)``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .evaluation import LabeledBox3D
from .geometry import bev_intersection_area, box_corners
from .scene import Box2D, Box3D, CameraModel, PointCloud, Scene, clamp_box2d, project_points

log = logging.getLogger(__name__)

DEFAULT_CATEGORIES = ("chair", "table", "sofa", "bed", "cabinet", "desk", "bookshelf", "dresser")
MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SynthSpec:
    n_scenes: int = 100
    objects_per_scene: tuple = (1, 5)
    points_per_object: tuple = (800, 1600)
    noise_sigma: float = 0.01
    clutter_fraction: float = 0.05
    room: tuple = ((0.0, 0.0, 0.0), (6.0, 6.0, 3.0))
    seed: int = 0
    # footprint (l, w) and height ranges in meters
    footprint_range: tuple = (0.5, 1.4)
    height_range: tuple = (0.5, 1.2)
    max_yaw: float = 0.0
    min_gap: float = 0.4
    categories: tuple = DEFAULT_CATEGORIES
    focal: float = 525.0
    width: int = 640
    height: int = 480
    camera_distance: float = 6.0
    camera_height: float = 4.5

    def __post_init__(self):
        lo, hi = self.objects_per_scene
        if not (0 <= lo <= hi):
            raise ValueError("objects_per_scene must be a non-empty range")
        lo, hi = self.points_per_object
        if not (1 <= lo <= hi):
            raise ValueError("points_per_object must be a non-empty range")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (0.0 <= self.clutter_fraction < 1.0):
            raise ValueError("clutter_fraction must lie in [0, 1)")
        rlo, rhi = np.asarray(self.room[0], float), np.asarray(self.room[1], float)
        if rlo.shape != (3,) or rhi.shape != (3,) or np.any(rhi <= rlo):
            raise ValueError("room must have positive volume")
        if not (0 < self.footprint_range[0] <= self.footprint_range[1]):
            raise ValueError("footprint_range must be a positive, non-empty range")
        if not (0 < self.height_range[0] <= self.height_range[1]):
            raise ValueError("height_range must be a positive, non-empty range")
        if self.n_scenes < 0 or self.min_gap < 0 or not self.categories:
            raise ValueError("invalid n_scenes, min_gap or categories")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return {k: (list(map(list, v)) if k == "room" else list(v) if isinstance(v, tuple) else v)
                for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth spec fields: {sorted(unknown)}")
        kw = dict(d)
        if "room" in kw:
            kw["room"] = tuple(tuple(float(x) for x in c) for c in kw["room"])
        for k in ("objects_per_scene", "points_per_object", "footprint_range", "height_range", "categories"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


def scene_id(index: int) -> str:
    return f"scene_{index:04d}"


def make_camera(spec: SynthSpec) -> CameraModel:
    """Camera in front of the room (low-y side), centred in x, pitched down at the room centre."""
    lo, hi = np.asarray(spec.room[0], float), np.asarray(spec.room[1], float)
    mid = (lo + hi) / 2.0
    eye = np.array([mid[0], lo[1] - spec.camera_distance, lo[2] + spec.camera_height])
    target = np.array([mid[0], mid[1], lo[2]])
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.vstack([right, down, fwd])
    return CameraModel.pinhole(spec.focal, spec.width / 2.0, spec.height / 2.0,
                               spec.width, spec.height, R=R, t=-R @ eye)


def _place_objects(spec: SynthSpec, rng: np.random.Generator, n: int):
    lo, hi = np.asarray(spec.room[0], float), np.asarray(spec.room[1], float)
    boxes = []
    for _ in range(n):
        l, w = rng.uniform(*spec.footprint_range, size=2)
        h = rng.uniform(*spec.height_range)
        h = min(h, hi[2] - lo[2])
        placed = None
        for _ in range(MAX_ATTEMPTS):
            yaw = rng.uniform(-spec.max_yaw, spec.max_yaw) if spec.max_yaw > 0 else 0.0
            # bound the rotated footprint by its circumscribed square
            c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
            hx, hy = (c * l + s * w) / 2.0, (s * l + c * w) / 2.0
            if hi[0] - lo[0] <= 2 * hx or hi[1] - lo[1] <= 2 * hy:
                continue
            x = rng.uniform(lo[0] + hx, hi[0] - hx)
            y = rng.uniform(lo[1] + hy, hi[1] - hy)
            cand = Box3D((x, y, lo[2] + h / 2.0), (l, w, h), yaw)
            grown = Box3D(cand.center, (l + spec.min_gap, w + spec.min_gap, h), yaw)
            if all(bev_intersection_area(grown, Box3D(b.center, (b.size[0] + spec.min_gap,
                                                                b.size[1] + spec.min_gap, b.size[2]), b.yaw)) == 0.0
                   for b in boxes):
                placed = cand
                break
        if placed is None:
            return None
        boxes.append(placed)
    return boxes


def _sample_interior(box: Box3D, n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    local = (rng.random((n, 3)) - 0.5) * np.array(box.size)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    pts = np.column_stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1], local[:, 2]])
    pts += np.array(box.center)
    if sigma > 0:
        pts += rng.normal(0.0, sigma, size=pts.shape)
    return pts


def project_box(cam: CameraModel, box: Box3D):
    """Clipped 2D bounding rectangle of the projected corners (None if out of frame)."""
    uv, depth, valid = project_points(cam, box_corners(box))
    if not valid.all() or np.any(depth <= 0):
        return None
    return clamp_box2d(Box2D(float(uv[:, 0].min()), float(uv[:, 1].min()),
                             float(uv[:, 0].max()), float(uv[:, 1].max())), cam)


def generate_scene(spec: SynthSpec, index: int):
    """Return ``(Scene, [LabeledBox3D], [Box2D])`` for scene ``index``."""
    rng = np.random.default_rng([int(spec.seed) & 0xFFFFFFFFFFFFFFFF, index])
    n_obj = int(rng.integers(spec.objects_per_scene[0], spec.objects_per_scene[1] + 1))
    state = rng.bit_generator.state
    boxes = None
    while boxes is None:
        rng.bit_generator.state = state
        boxes = _place_objects(spec, rng, n_obj)
        if boxes is None:
            log.warning("scene %d: could not place %d objects, retrying with %d", index, n_obj, n_obj - 1)
            n_obj -= 1

    cam = make_camera(spec)
    parts, gt, boxes2d = [], [], []
    for b in boxes:
        n = int(rng.integers(spec.points_per_object[0], spec.points_per_object[1] + 1))
        parts.append(_sample_interior(b, n, spec.noise_sigma, rng))
        cat = spec.categories[int(rng.integers(len(spec.categories)))]
        score = float(rng.uniform(0.5, 1.0))
        gt.append(LabeledBox3D(b, cat))
        b2 = project_box(cam, b)
        if b2 is not None:
            boxes2d.append(Box2D(b2.x1, b2.y1, b2.x2, b2.y2, score=score, phrase=cat))

    n_obj_pts = sum(len(p) for p in parts)
    n_clutter = int(round(spec.clutter_fraction / (1.0 - spec.clutter_fraction) * n_obj_pts))
    if n_clutter:
        lo, hi = np.asarray(spec.room[0], float), np.asarray(spec.room[1], float)
        parts.append(lo + rng.random((n_clutter, 3)) * (hi - lo))
    pts = np.vstack(parts) if parts else np.zeros((0, 3))
    return Scene(scene_id(index), PointCloud(pts), cam), gt, boxes2d


def write_dataset(spec: SynthSpec, root, threads: int = 1) -> list:
    """Generate ``spec.n_scenes`` scenes into ``root``. Returns the scene ids."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    def work(i):
        scene, gt, b2 = generate_scene(spec, i)
        io.write_scene(root, scene, gt, b2)
        return scene.scene_id

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            ids = list(ex.map(work, range(spec.n_scenes)))
    else:
        ids = [work(i) for i in range(spec.n_scenes)]
    io.write_index(root, ids)
    return ids
