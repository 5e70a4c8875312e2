"""Threshold RANSAC comparator: fixed inlier distance, fixed plane count.

Mimics generic point-cloud sequential RANSAC. Each round keeps the sampled
plane with the largest consensus set |n.x + d| < threshold, removes those
points and continues until ``num_planes`` planes are found or fewer than
three points remain. It never stops early on its own, so surplus planes are
carved out of noise. Information terms are computed afterwards so results
can be ranked and compared with the information-based detector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .detector import (
    AssignmentMask,
    DetectedPlane,
    DetectionResult,
    sample_triples,
    trial_count,
)
from .geometry import Plane, planes_from_triples
from .information import InfoContext, model_information
from .sensor import Constant, RayCloud

logger = logging.getLogger(__name__)

_BLOCK = 1 << 21


@dataclass(frozen=True)
class BaselineConfig:
    threshold_sigma: float = 0.005
    num_planes: int = 8
    trials: int = trial_count(0.99, 0.25)
    seed: int = 0

    def __post_init__(self):
        if not self.threshold_sigma > 0:
            raise ValueError("threshold_sigma must be positive")
        if self.num_planes < 1:
            raise ValueError("num_planes must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def to_dict(self) -> dict:
        return {"threshold_sigma": self.threshold_sigma, "num_planes": self.num_planes,
                "trials": self.trials, "seed": self.seed}


def _consensus(pts: np.ndarray, normals: np.ndarray, dists: np.ndarray, thr: float) -> np.ndarray:
    m, t = pts.shape[0], normals.shape[0]
    out = np.empty(t, dtype=np.int64)
    step = max(1, _BLOCK // max(m, 1))
    for a in range(0, t, step):
        b = min(t, a + step)
        d = np.abs(pts @ normals[a:b].T + dists[None, a:b])
        out[a:b] = (d < thr).sum(axis=0)
    return out


def _default_context(cloud: RayCloud, cfg: BaselineConfig) -> InfoContext:
    z = cloud.points[:, 2]
    eps = 0.01
    span = float(z.max() - z.min()) if len(cloud) else 0.0
    return InfoContext.from_range(max(span, 2 * eps), eps, Constant(cfg.threshold_sigma))


def baseline_detect(cloud: RayCloud, cfg: BaselineConfig = BaselineConfig(),
                    ctx: Optional[InfoContext] = None) -> DetectionResult:
    """Sequential fixed-threshold RANSAC.

    Planes keep their discovery order as rank. ``ctx`` is only used for the
    post-hoc information bookkeeping; without it a constant-noise context
    with sigma = threshold and eps = 1 cm over the cloud's depth span is used.
    """
    if ctx is None:
        ctx = _default_context(cloud, cfg)
    k = len(cloud)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    labels = np.zeros(k, dtype=np.int64)
    planes = []
    counts = []
    for j in range(1, cfg.num_planes + 1):
        remaining = np.flatnonzero(labels == 0)
        if remaining.size < 3:
            logger.info("baseline stopped after %d planes: too few points", len(planes))
            break
        pts = cloud.points[remaining]
        tri = sample_triples(rng, remaining.size, cfg.trials)
        normals, dists, ok = planes_from_triples(pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]])
        score = _consensus(pts, normals, dists, cfg.threshold_sigma)
        score[~ok] = -1
        best = int(np.argmax(score))
        if score[best] < 0:
            break
        plane = Plane(normals[best], dists[best])
        inl = np.abs(pts @ plane.normal + plane.dist) < cfg.threshold_sigma
        labels[remaining[inl]] = j
        planes.append(plane)
        counts.append(int(inl.sum()))

    info = model_information(cloud, planes, labels, ctx)
    detected = [DetectedPlane(p, c, info.per_plane[i].reduction_nats, rank=i + 1)
                for i, (p, c) in enumerate(zip(planes, counts))]
    return DetectionResult(detected, AssignmentMask(labels, len(planes)), info, [info.total_nats],
                           {"baseline": cfg.to_dict()})
