"""Oriented 3D box geometry: corners, footprints, containment and exact IoU.

Boxes rotate about z only, so the intersection of two boxes is the overlap of
their bird's-eye-view (BEV) footprints times the overlap of their z ranges.
Footprint overlap is computed exactly with Sutherland-Hodgman clipping.
"""
from __future__ import annotations

import math

import numpy as np

from .scene import Box3D

# footprints smaller than this (m^2) are treated as empty
MIN_POLY_AREA = 1e-10


def bev_corners(b: Box3D) -> np.ndarray:
    """Footprint vertices (4 x 2), counter-clockwise."""
    l, w = b.size[0] / 2.0, b.size[1] / 2.0
    local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array(b.center[:2])


def box_corners(b: Box3D) -> np.ndarray:
    """Eight corners (8 x 3): the bottom face CCW, then the top face in the same order."""
    xy = bev_corners(b)
    z0 = b.center[2] - b.size[2] / 2.0
    z1 = b.center[2] + b.size[2] / 2.0
    bottom = np.column_stack([xy, np.full(4, z0)])
    top = np.column_stack([xy, np.full(4, z1)])
    return np.vstack([bottom, top])


def points_in_box(b: Box3D, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside ``b`` (faces expanded by ``slack``)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    d = pts - np.array(b.center)
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    # rotate into the box frame
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    half = np.array(b.size) / 2.0 + slack
    return (np.abs(lx) <= half[0]) & (np.abs(ly) <= half[1]) & (np.abs(d[:, 2]) <= half[2])


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for CCW vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross(o, a, p):
    return (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: intersect ``subject`` with the convex CCW polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % n]
        inp, out = out, []
        prev = inp[-1]
        prev_in = _cross(a, b, prev) >= 0.0
        for cur in inp:
            cur_in = _cross(a, b, cur) >= 0.0
            if cur_in != prev_in:
                # edge crosses the clip line; solve for the crossing point
                dp = _cross(a, b, prev)
                dc = _cross(a, b, cur)
                t = dp / (dp - dc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                out.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    pa, pb = bev_corners(a), bev_corners(b)
    if polygon_area(pa) < MIN_POLY_AREA or polygon_area(pb) < MIN_POLY_AREA:
        return 0.0
    # circumscribed circles do not touch
    ra = math.hypot(a.size[0], a.size[1]) / 2.0
    rb = math.hypot(b.size[0], b.size[1]) / 2.0
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    area = polygon_area(clip_polygon(pa, pb))
    return area if area >= MIN_POLY_AREA else 0.0


def intersection_volume(a: Box3D, b: Box3D) -> float:
    lo = max(a.center[2] - a.size[2] / 2.0, b.center[2] - b.size[2] / 2.0)
    hi = min(a.center[2] + a.size[2] / 2.0, b.center[2] + b.size[2] / 2.0)
    if hi <= lo:
        return 0.0
    return bev_intersection_area(a, b) * (hi - lo)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Exact oriented 3D IoU in [0, 1]."""
    if a == b:
        return 1.0
    # fixed argument order makes the result exactly symmetric
    if tuple(b.as_array()) < tuple(a.as_array()):
        a, b = b, a
    inter = intersection_volume(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou3d(a, b)
    return out
