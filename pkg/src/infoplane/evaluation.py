"""Plane parameter errors and segmentation agreement metrics (VOI, RI, SC).

Label 0 (outliers / non-planar) counts as a region of its own unless
``ignore_outliers`` is set, in which case pixels labelled 0 in either mask
are dropped from both before scoring.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Plane

# 1 cm of offset weighs like 1 degree of tilt when pairing planes
MATCH_DIST_WEIGHT = 100.0


@dataclass
class PlaneError:
    pred_id: int
    matched_gt_id: int
    normal_error_deg: float
    distance_error_m: float


@dataclass
class EvalReport:
    per_plane: List[PlaneError] = field(default_factory=list)
    voi: float = 0.0
    ri: float = 1.0
    sc: float = 1.0
    unmatched_pred: int = 0
    unmatched_gt: int = 0
    ignore_outliers: bool = False

    def mean_normal_error(self) -> float:
        return float(np.mean([p.normal_error_deg for p in self.per_plane])) if self.per_plane else math.nan

    def mean_distance_error(self) -> float:
        return float(np.mean([p.distance_error_m for p in self.per_plane])) if self.per_plane else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_normal_error_deg"] = self.mean_normal_error()
        d["mean_distance_error_m"] = self.mean_distance_error()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    CSV_FIELDS = ("voi", "ri", "sc", "mean_normal_error_deg", "mean_distance_error_m",
                  "matched", "unmatched_pred", "unmatched_gt", "ignore_outliers")

    def csv_row(self) -> dict:
        return {
            "voi": self.voi, "ri": self.ri, "sc": self.sc,
            "mean_normal_error_deg": self.mean_normal_error(),
            "mean_distance_error_m": self.mean_distance_error(),
            "matched": len(self.per_plane),
            "unmatched_pred": self.unmatched_pred,
            "unmatched_gt": self.unmatched_gt,
            "ignore_outliers": int(self.ignore_outliers),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()


def _pair_errors(p: Plane, g: Plane):
    c = float(np.dot(p.normal, g.normal))
    ang = math.degrees(math.acos(min(1.0, abs(c))))
    # same geometric plane under (n, d) -> (-n, -d)
    dist = abs(p.dist - g.dist) if c >= 0 else abs(p.dist + g.dist)
    return ang, dist


def match_and_param_errors(pred: Sequence[Plane], gt: Sequence[Plane]) -> List[PlaneError]:
    """Optimal one-to-one pairing of predicted and true planes.

    The pairing cost is angle (degrees) + 100 * offset error (meters); the
    angle alone cannot tell parallel planes apart.
    """
    if not pred or not gt:
        return []
    cost = np.zeros((len(pred), len(gt)))
    errs = {}
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            a, d = _pair_errors(p, g)
            errs[i, j] = (a, d)
            cost[i, j] = a + MATCH_DIST_WEIGHT * d
    rows, cols = linear_sum_assignment(cost)
    out = [PlaneError(int(i), int(j), *errs[i, j]) for i, j in zip(rows, cols)]
    return sorted(out, key=lambda e: e.matched_gt_id)


def _prepare(a, b, ignore_outliers: bool):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"mask sizes differ: {a.size} vs {b.size}")
    if ignore_outliers:
        keep = (a != 0) & (b != 0)
        a, b = a[keep], b[keep]
    return a, b


def contingency(a, b) -> np.ndarray:
    """Joint label histogram with rows over a's labels, columns over b's."""
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def voi(a, b, ignore_outliers: bool = False) -> float:
    """Variation of information H(a) + H(b) - 2 I(a; b), in nats."""
    a, b = _prepare(a, b, ignore_outliers)
    n = a.size
    if n == 0:
        return 0.0
    t = contingency(a, b)
    h_ab = _entropy(t.ravel(), n)
    h_a = _entropy(t.sum(axis=1), n)
    h_b = _entropy(t.sum(axis=0), n)
    return max(0.0, 2.0 * h_ab - h_a - h_b)


def rand_index(a, b, ignore_outliers: bool = False) -> float:
    """Fraction of point pairs on which both labellings agree."""
    a, b = _prepare(a, b, ignore_outliers)
    n = a.size
    if n < 2:
        return 1.0
    t = contingency(a, b)

    def pairs(x):
        x = x.astype(np.float64)
        return float(np.sum(x * (x - 1) / 2))

    total = n * (n - 1) / 2
    same_both = pairs(t.ravel())
    same_a = pairs(t.sum(axis=1))
    same_b = pairs(t.sum(axis=0))
    # agree = same in both + different in both
    agree = total - same_a - same_b + 2 * same_both
    return agree / total


def segmentation_covering(gt, pred, ignore_outliers: bool = False) -> float:
    """Size-weighted best IoU of each ground-truth region against pred regions."""
    g, p = _prepare(gt, pred, ignore_outliers)
    n = g.size
    if n == 0:
        return 1.0
    t = contingency(g, p).astype(np.float64)
    size_g = t.sum(axis=1)
    size_p = t.sum(axis=0)
    union = size_g[:, None] + size_p[None, :] - t
    iou = t / union
    return float(np.sum(size_g / n * iou.max(axis=1)))


def evaluate(pred_labels, gt_labels, pred_planes: Optional[Sequence[Plane]] = None,
             gt_planes: Optional[Sequence[Plane]] = None, ignore_outliers: bool = False) -> EvalReport:
    rep = EvalReport(
        voi=voi(pred_labels, gt_labels, ignore_outliers),
        ri=rand_index(pred_labels, gt_labels, ignore_outliers),
        sc=segmentation_covering(gt_labels, pred_labels, ignore_outliers),
        ignore_outliers=ignore_outliers,
    )
    if pred_planes is not None and gt_planes is not None:
        rep.per_plane = match_and_param_errors(pred_planes, gt_planes)
        rep.unmatched_pred = len(pred_planes) - len(rep.per_plane)
        rep.unmatched_gt = len(gt_planes) - len(rep.per_plane)
    return rep
