"""Training objective: box matching, localization loss and cross-modal contrastive loss.

The total loss is ``L = L_loc + L_recog`` where

* ``L_loc`` sums a box regression term over Hungarian-matched
  (prediction, pseudo-label) pairs, and
* ``L_recog = L_cl(F_pc, F_2D) + L_cl(F_pc, F_t)`` aligns point-cloud region
  features with frozen image and text features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import iou3d
from .scene import Box3D, wrap_angle

DEFAULT_TAU = 0.07
MODALITIES = ("pc", "image", "text")


@dataclass(frozen=True, eq=False)
class FeatureVec:
    id: str
    values: np.ndarray
    modality: str
    category: Optional[str] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if v.size == 0:
            raise ValueError(f"feature {self.id!r} is empty")
        bad = np.flatnonzero(~np.isfinite(v))
        if len(bad):
            raise ValueError(f"feature {self.id!r} has non-finite value at index {bad[0]}")
        if self.modality not in MODALITIES:
            raise ValueError(f"feature {self.id!r}: unknown modality {self.modality!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureVec):
            return NotImplemented
        return (self.id == other.id and self.modality == other.modality
                and self.category == other.category and np.array_equal(self.values, other.values))


def stack_features(feats) -> np.ndarray:
    """Stack FeatureVecs (or pass through an array) into a (B, D) float array."""
    if isinstance(feats, np.ndarray):
        arr = feats.astype(np.float64, copy=False)
    else:
        feats = list(feats)
        if feats and isinstance(feats[0], FeatureVec):
            dims = {f.dim for f in feats}
            if len(dims) > 1:
                raise ValueError(f"inconsistent feature dimensions {sorted(dims)}")
            arr = np.array([f.values for f in feats])
        else:
            arr = np.asarray(feats, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D feature batch, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature batch has non-finite entries")
    return arr


def positives_by_category(anchors: Sequence[FeatureVec], pool: Sequence[FeatureVec]) -> list:
    """Positive map pairing each anchor with the pool entries of its category."""
    out = []
    for a in anchors:
        if a.category is None:
            raise ValueError(f"anchor {a.id!r} has no category; pass explicit positives")
        pos = [k for k, f in enumerate(pool) if f.category == a.category]
        if not pos:
            raise ValueError(f"anchor {a.id!r} ({a.category}) has no positive in the batch")
        out.append(pos)
    return out


# ---------------------------------------------------------------- matching

@dataclass(frozen=True)
class Assignment:
    pairs: tuple
    total_cost: float


def hungarian_match(cost) -> Assignment:
    """Minimum-cost one-to-one assignment of ``min(P, T)`` pairs.

    Shortest augmenting path (Jonker-Volgenant style) with dual potentials,
    run over the shorter side so rectangular matrices need no padding.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.size == 0:
        return Assignment((), 0.0)
    if c.ndim != 2:
        raise ValueError("cost must be a 2D matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape  # n <= m

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)   # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            cols = np.flatnonzero(free) + 1
            better = cur[cols - 1] < minv[cols]
            minv[cols[better]] = cur[cols - 1][better]
            way[cols[better]] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = []
    for j in range(1, m + 1):
        if p[j]:
            r, col = int(p[j]) - 1, j - 1
            pairs.append((col, r) if transposed else (r, col))
    pairs.sort()
    c0 = np.asarray(cost, dtype=np.float64)
    total = float(sum(c0[a, b] for a, b in pairs))
    return Assignment(tuple(pairs), total)


def box_cost(pred: Box3D, tgt: Box3D, center_weight: float = 1.0, iou_weight: float = 2.0) -> float:
    """Matching cost: weighted L1 center distance plus weighted (1 - IoU)."""
    if center_weight < 0 or iou_weight < 0:
        raise ValueError("cost weights must be non-negative")
    dc = sum(abs(a - b) for a, b in zip(pred.center, tgt.center))
    return center_weight * dc + iou_weight * (1.0 - iou3d(pred, tgt))


def box_regression(pred: Box3D, tgt: Box3D) -> float:
    """L1 on center and size plus wrapped absolute yaw difference."""
    dc = sum(abs(a - b) for a, b in zip(pred.center, tgt.center))
    ds = sum(abs(a - b) for a, b in zip(pred.size, tgt.size))
    return dc + ds + abs(wrap_angle(pred.yaw - tgt.yaw))


def loc_loss(preds: Sequence[Box3D], targets: Sequence[Box3D], center_weight: float = 1.0,
             iou_weight: float = 2.0, mean: bool = False):
    """Localization loss over Hungarian-matched pairs.

    Returns ``(loss, assignment)``. The loss is a plain sum over matched
    pairs; ``mean=True`` divides by the number of pairs instead.
    """
    preds, targets = list(preds), list(targets)
    if not preds or not targets:
        return 0.0, Assignment((), 0.0)
    cost = np.array([[box_cost(p, t, center_weight, iou_weight) for t in targets] for p in preds])
    match = hungarian_match(cost)
    total = 0.0
    for i, j in match.pairs:
        total += box_regression(preds[i], targets[j])
    if mean:
        total /= len(match.pairs)
    return total, match


# ------------------------------------------------------------- contrastive

def _logsumexp(x: np.ndarray) -> float:
    mx = x.max()
    return float(mx + math.log(np.exp(x - mx).sum()))


def contrastive_loss(f1, f2, positives: Sequence[Sequence[int]], tau: float = DEFAULT_TAU):
    """Multi-positive InfoNCE of anchors ``f1`` against the pool ``f2``.

    For anchor b with unit feature u_b and pool features g_k (both L2
    normalised here)::

        L = -(1/B) sum_b log( sum_{j in pos(b)} exp(u_b.g_j / tau)
                              / sum_{k in pool}  exp(u_b.g_k / tau) )

    The denominator runs over the entire pool, positives included.

    Returns ``(loss, grad)`` where ``grad`` is dL/d(raw f1), same shape as
    ``f1``. ``f2`` is treated as constant.
    """
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"temperature must be positive, got {tau}")
    x = stack_features(f1)
    g = stack_features(f2)
    B, D = x.shape
    if B < 1 or len(g) < 1:
        raise ValueError("contrastive loss needs non-empty batches")
    if g.shape[1] != D:
        raise ValueError(f"dimension mismatch: {D} vs {g.shape[1]}")
    if len(positives) != B:
        raise ValueError(f"positive map has {len(positives)} rows for {B} anchors")

    xn = np.linalg.norm(x, axis=1)
    gn = np.linalg.norm(g, axis=1)
    if np.any(xn == 0) or np.any(gn == 0):
        raise ValueError("zero feature vector cannot be normalised")
    u = x / xn[:, None]
    gu = g / gn[:, None]
    s = (u @ gu.T) / tau

    loss = 0.0
    grad = np.zeros_like(x)
    for b in range(B):
        pos = np.asarray(positives[b], dtype=np.int64)
        if pos.size == 0:
            raise ValueError(f"anchor {b} has no positives")
        if pos.min() < 0 or pos.max() >= len(g):
            raise ValueError(f"anchor {b}: positive index out of range")
        pos = np.unique(pos)
        mask = np.zeros(len(g), dtype=bool)
        mask[pos] = True
        row = s[b]
        lse_all = _logsumexp(row)
        lse_pos = _logsumexp(row[mask]) if not mask.all() else lse_all
        term = lse_all - lse_pos
        if term < -1e-12:
            raise RuntimeError(f"negative contrastive term {term} for anchor {b}")
        loss += term
        p_all = np.exp(row - lse_all)
        p_pos = np.where(mask, np.exp(row - lse_pos), 0.0)
        du = (p_all - p_pos) @ gu / tau
        # back through u = x / |x|
        grad[b] = (du - u[b] * (u[b] @ du)) / xn[b]
    return loss / B, grad / B


def recog_loss(f_pc, f_2d, f_t, pos_2d, pos_t, tau: float = DEFAULT_TAU) -> float:
    """Recognition loss: image term plus text term, sharing point-cloud anchors."""
    l_img, _ = contrastive_loss(f_pc, f_2d, pos_2d, tau)
    l_txt, _ = contrastive_loss(f_pc, f_t, pos_t, tau)
    return l_img + l_txt


def total_loss(l_loc: float, l_recog: float) -> float:
    if not (math.isfinite(l_loc) and math.isfinite(l_recog)):
        raise ValueError("loss terms must be finite")
    return l_loc + l_recog
