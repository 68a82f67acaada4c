"""Per-category AP / AR for 3D detection at a set of IoU thresholds.

Predictions of a category are ranked by descending score (ties: scene id,
then input order) and matched greedily, each to the unmatched ground-truth
box of the same scene and category with highest IoU at or above the
threshold. AP is the area under the precision envelope over every recall
step (all-point interpolation); AR is the recall reached with all
predictions.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .geometry import iou3d
from .scene import Box3D

DEFAULT_THRESHOLDS = (0.25, 0.5)


@dataclass(frozen=True)
class LabeledBox3D:
    box: Box3D
    category: str
    score: Optional[float] = None

    def __post_init__(self):
        if not self.category:
            raise ValueError("category must be non-empty")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class EvalReport:
    thresholds: tuple
    categories: tuple
    ap: dict            # (category, threshold) -> AP
    ar: dict            # (category, threshold) -> AR
    n_gt: dict          # category -> count
    n_pred: dict        # category -> count
    diagnostics: list = field(default_factory=list)

    def mean_ap(self, t: float) -> float:
        return self._mean(self.ap, t)

    def mean_ar(self, t: float) -> float:
        return self._mean(self.ar, t)

    def _mean(self, table, t):
        vals = [table[(c, t)] for c in self.categories if self.n_gt.get(c, 0) > 0]
        return sum(vals) / len(vals) if vals else 0.0

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "categories": list(self.categories),
            "per_category": {
                c: {
                    "n_gt": self.n_gt.get(c, 0),
                    "n_pred": self.n_pred.get(c, 0),
                    "ap": {_tkey(t): self.ap[(c, t)] for t in self.thresholds},
                    "ar": {_tkey(t): self.ar[(c, t)] for t in self.thresholds},
                }
                for c in self.categories
            },
            "mAP": {_tkey(t): self.mean_ap(t) for t in self.thresholds},
            "mAR": {_tkey(t): self.mean_ar(t) for t in self.thresholds},
            "diagnostics": list(self.diagnostics),
        }

    def table(self) -> str:
        """Plain-text table: one row per metric, categories as columns, mean last."""
        cols = list(self.categories) + ["mean"]
        rows = []
        for name, table, mean in (("AP", self.ap, self.mean_ap), ("AR", self.ar, self.mean_ar)):
            for t in self.thresholds:
                vals = [100.0 * table[(c, t)] for c in self.categories] + [100.0 * mean(t)]
                rows.append([f"{name}{int(round(t * 100))}"] + [f"{v:.2f}" for v in vals])
        header = ["metric"] + cols
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        fmt = lambda r: "  ".join(s.rjust(w) if i else s.ljust(w) for i, (s, w) in enumerate(zip(r, widths)))
        lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        return "\n".join(lines)


def _tkey(t: float) -> str:
    return repr(float(t))


def average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of a ranked TP/FP sequence (exact rational arithmetic)."""
    if n_gt == 0:
        return 0.0
    prec, rec = [], []
    tp = fp = 0
    for flag in tp_flags:
        if flag:
            tp += 1
        else:
            fp += 1
        prec.append(Fraction(tp, tp + fp))
        rec.append(Fraction(tp, n_gt))
    # precision envelope: running max from the right
    for k in range(len(prec) - 2, -1, -1):
        if prec[k + 1] > prec[k]:
            prec[k] = prec[k + 1]
    ap = Fraction(0)
    prev_r = Fraction(0)
    for p, r in zip(prec, rec):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _match_category(preds, gts, t):
    """preds: list of (scene, order, LabeledBox3D); gts: scene -> list of boxes."""
    used = {s: [False] * len(b) for s, b in gts.items()}
    flags = []
    for scene, _, p in preds:
        cands = gts.get(scene, [])
        best, best_iou = -1, -1.0
        for k, g in enumerate(cands):
            if used[scene][k]:
                continue
            iou = iou3d(p.box, g.box)
            if iou >= t and iou > best_iou:
                best, best_iou = k, iou
        if best >= 0:
            used[scene][best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def evaluate(preds: Mapping[str, Sequence[LabeledBox3D]], gts: Mapping[str, Sequence[LabeledBox3D]],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
             categories: Optional[Sequence[str]] = None) -> EvalReport:
    """Score predictions against ground truth, both keyed by scene id.

    ``categories`` fixes the evaluation vocabulary (default: every ground-truth
    category, sorted). Predictions outside it are false positives that can
    match nothing; they are listed in ``diagnostics``.
    """
    thresholds = tuple(float(t) for t in thresholds)
    for t in thresholds:
        if not (0.0 < t <= 1.0):
            raise ValueError(f"IoU threshold {t} outside (0, 1]")
    if categories is None:
        categories = sorted({g.category for boxes in gts.values() for g in boxes})
    categories = tuple(categories)
    known = set(categories)
    diagnostics = []

    missing = sorted(set(preds) - set(gts))
    if missing:
        diagnostics.append(f"prediction scenes without ground truth: {missing}")

    gt_by_cat = defaultdict(lambda: defaultdict(list))
    for scene, boxes in gts.items():
        for g in boxes:
            if g.category in known:
                gt_by_cat[g.category][scene].append(g)
    pred_by_cat = defaultdict(list)
    unknown = defaultdict(int)
    for scene in sorted(preds):
        for order, p in enumerate(preds[scene]):
            if p.category in known:
                pred_by_cat[p.category].append((scene, order, p))
            else:
                unknown[p.category] += 1
    for cat, n in sorted(unknown.items()):
        diagnostics.append(f"{n} prediction(s) with unknown category {cat!r} counted as false positives")

    ap, ar, n_gt, n_pred = {}, {}, {}, {}
    for cat in categories:
        ranked = sorted(pred_by_cat[cat], key=lambda r: (-(r[2].score if r[2].score is not None else 0.0), r[0], r[1]))
        g = gt_by_cat[cat]
        total = sum(len(v) for v in g.values())
        n_gt[cat] = total
        n_pred[cat] = len(ranked)
        for t in thresholds:
            flags = _match_category(ranked, g, t)
            ap[(cat, t)] = average_precision(flags, total)
            ar[(cat, t)] = sum(flags) / total if total else 0.0
    return EvalReport(thresholds, categories, ap, ar, n_gt, n_pred, diagnostics)
