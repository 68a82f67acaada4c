"""Core scene types: point clouds, cameras, 2D/3D boxes and vocabularies.

Conventions
-----------
* World frame is metric, z points up. Box yaw is a rotation about z.
* ``CameraModel.P`` maps homogeneous world points to pixels. Any extrinsic
  transform is assumed to be folded into ``P``; it is never decomposed.
* All types are immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

# projections with |w| below this are flagged invalid
W_EPS = 1e-12
# points closer than this are never "in front of" the camera
MIN_DEPTH = 1e-6
# minimum clipped area (pixels^2) for a 2D box to survive clamping
MIN_BOX_AREA = 1.0


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi). Values already in range are returned untouched."""
    a = float(a)
    if -math.pi <= a < math.pi:
        return a
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w < 0.0:
        w += 2.0 * math.pi
    w -= math.pi
    # fmod rounding can land exactly on +pi
    if w >= math.pi:
        w -= 2.0 * math.pi
    return w


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x 3 array of points in meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
            raise ValueError(f"non-finite coordinate at point {bad}")
        object.__setattr__(self, "points", _readonly(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """3x4 projection matrix plus image size in pixels."""

    P: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64, copy=True)
        if P.shape != (3, 4):
            raise ValueError(f"P must be 3x4, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("P has non-finite entries")
        if abs(np.linalg.det(P[:, :3])) <= 1e-9:
            raise ValueError("left 3x3 block of P is singular")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image width and height must be positive")
        object.__setattr__(self, "P", _readonly(P))

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (np.array_equal(self.P, other.P) and self.width == other.width
                and self.height == other.height)

    @classmethod
    def pinhole(cls, f: float, cx: float, cy: float, width: int, height: int,
                R: Optional[np.ndarray] = None, t: Optional[np.ndarray] = None) -> "CameraModel":
        """Build ``P = K [R | t]`` for a pinhole camera (identity pose by default)."""
        K = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
        R = np.eye(3) if R is None else np.asarray(R, dtype=np.float64)
        t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
        return cls(K @ np.hstack([R, t[:, None]]), width, height)


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    valid: bool


def project_point(cam: CameraModel, p: Sequence[float]) -> Projection:
    x, y, z = (float(c) for c in p)
    if not all(math.isfinite(c) for c in (x, y, z)):
        raise ValueError("point must be finite")
    u, v, w = cam.P @ np.array([x, y, z, 1.0])
    if abs(w) < W_EPS:
        return Projection(math.nan, math.nan, float(w), False)
    return Projection(float(u / w), float(v / w), float(w), True)


def project_points(cam: CameraModel, pts: np.ndarray):
    """Vectorised :func:`project_point`.

    Returns ``(uv, depth, valid)`` with ``uv`` of shape (N, 2); rows where
    ``valid`` is False hold NaN.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    hom = pts @ cam.P[:, :3].T + cam.P[:, 3]
    w = hom[:, 2]
    valid = np.abs(w) >= W_EPS
    uv = np.full((len(pts), 2), np.nan)
    uv[valid] = hom[valid, :2] / w[valid, None]
    return uv, w, valid


@dataclass(frozen=True)
class Box2D:
    x1: float
    y1: float
    x2: float
    y2: float
    score: Optional[float] = None
    phrase: Optional[str] = None

    def __post_init__(self):
        coords = tuple(float(c) for c in (self.x1, self.y1, self.x2, self.y2))
        for name, c in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, c)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError("box coordinates must be finite")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {coords}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def clamp_box2d(b: Box2D, cam: CameraModel) -> Optional[Box2D]:
    """Clip ``b`` to the image. Returns None when less than one pixel^2 survives."""
    x1 = min(max(b.x1, 0.0), cam.width)
    x2 = min(max(b.x2, 0.0), cam.width)
    y1 = min(max(b.y1, 0.0), cam.height)
    y2 = min(max(b.y2, 0.0), cam.height)
    if (x2 - x1) * (y2 - y1) < MIN_BOX_AREA or x1 >= x2 or y1 >= y2:
        return None
    if (x1, y1, x2, y2) == (b.x1, b.y1, b.x2, b.y2):
        return b
    return Box2D(x1, y1, x2, y2, b.score, b.phrase)


@dataclass(frozen=True)
class Box3D:
    """7-DOF box: center (m), size (l, w, h) in m along the box axes, yaw about z."""

    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("center and size need three components")
        if not all(math.isfinite(v) for v in c + s + (float(self.yaw),)):
            raise ValueError("box parameters must be finite")
        if not all(v > 0 for v in s):
            raise ValueError(f"box size must be positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    def as_array(self) -> np.ndarray:
        return np.array(self.center + self.size + (self.yaw,))

    @classmethod
    def from_array(cls, a: Iterable[float]) -> "Box3D":
        a = [float(v) for v in a]
        return cls(tuple(a[:3]), tuple(a[3:6]), a[6])


@dataclass(frozen=True)
class ClassVocabulary:
    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        for n in names:
            if not isinstance(n, str) or not n:
                raise ValueError(f"category names must be non-empty strings, got {n!r}")
        if len(set(names)) != len(names):
            seen, dups = set(), []
            for n in names:
                if n in seen:
                    dups.append(n)
                seen.add(n)
            raise ValueError(f"duplicate categories: {dups}")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    cloud: PointCloud
    camera: CameraModel = field(compare=True)

    def __post_init__(self):
        if not self.scene_id:
            raise ValueError("scene_id must be non-empty")
