"""Region-restricted detection: label maps, grid blocks, leftover pass, global merge.

Each region is detected as its own model. The range R (hence R/eps) stays
global to the image, while the mask term uses the region's own point count,
since each region carries its own assignment mask. Points outside every
region form the leftover set, detected last with looser settings. Planes
from all parts are then merged on reductions and parameter cost alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .detector import (
    AssignmentMask,
    DetectedPlane,
    DetectionResult,
    DetectorConfig,
    detect,
    merge_pass,
    rank_planes,
    refine_planes,
)
from .information import InfoContext, cloud_sigmas, mask_cost, model_information
from .sensor import DepthImage, RayCloud

logger = logging.getLogger(__name__)

LEFTOVER_OVERRIDES = {"max_planes_N": 8, "inlier_ratio_r": 0.1}
_OVERRIDE_KEYS = ("max_planes_N", "inlier_ratio_r")


@dataclass
class PartitionSet:
    """Per-pixel region ids (0 = leftover) with optional per-region settings.

    ``overrides`` maps a region id to DetectorConfig field overrides and is
    applied on top of ``region_defaults``; ``leftover`` configures the final
    pass over unpartitioned pixels.
    """

    label_map: np.ndarray
    region_count: int
    overrides: Dict[int, dict] = field(default_factory=dict)
    region_defaults: dict = field(default_factory=dict)
    leftover: dict = field(default_factory=lambda: dict(LEFTOVER_OVERRIDES))

    def __post_init__(self):
        self.label_map = np.asarray(self.label_map, dtype=np.int64)
        if self.label_map.ndim != 2:
            raise ValueError("label map must be 2-D")
        ids = np.unique(self.label_map)
        ids = ids[ids != 0]
        if ids.size != self.region_count or (ids.size and (ids[0] != 1 or ids[-1] != ids.size)):
            raise ValueError("region ids must be dense in 1..region_count")
        for d in [self.region_defaults, self.leftover, *self.overrides.values()]:
            bad = set(d) - set(_OVERRIDE_KEYS)
            if bad:
                raise ValueError(f"unsupported override(s): {sorted(bad)}")

    @property
    def shape(self):
        return self.label_map.shape

    def region_config(self, region: int, cfg: DetectorConfig) -> DetectorConfig:
        if region == 0:
            return replace(cfg, **self.leftover) if self.region_count else cfg
        return replace(cfg, **{**self.region_defaults, **self.overrides.get(region, {})})

    def to_dict(self) -> dict:
        return {
            "region_count": self.region_count,
            "region_defaults": dict(self.region_defaults),
            "leftover": dict(self.leftover),
            "overrides": {str(k): dict(v) for k, v in sorted(self.overrides.items())},
        }


def densify(label_map: np.ndarray) -> PartitionSet:
    """Relabel arbitrary non-negative region ids to 1..n in ascending order."""
    lm = np.asarray(label_map, dtype=np.int64)
    if lm.size and lm.min() < 0:
        raise ValueError("region ids must be non-negative")
    ids, inv = np.unique(lm, return_inverse=True)
    lut = np.zeros(ids.size, dtype=np.int64)
    nz = ids != 0
    lut[nz] = np.arange(1, int(nz.sum()) + 1)
    return PartitionSet(lut[inv].reshape(lm.shape), int(nz.sum()))


def load_label_map(path, shape: Optional[tuple] = None) -> PartitionSet:
    """Read a 16-bit PGM/PNG label map (pixel = region id, 0 = leftover)."""
    from .fileio import read_image16

    lm = read_image16(path)
    if shape is not None and tuple(lm.shape) != tuple(shape):
        raise ValueError(f"label map is {lm.shape[1]}x{lm.shape[0]}, depth image is {shape[1]}x{shape[0]}")
    return densify(lm)


def grid_partition(img, rows: int, cols: int) -> PartitionSet:
    """rows x cols rectangular blocks covering the image, ids row-major from 1."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    shape = img.depth.shape if isinstance(img, DepthImage) else tuple(img)
    h, w = shape
    r_id = np.concatenate([np.full(len(a), i) for i, a in enumerate(np.array_split(np.arange(h), rows))])
    c_id = np.concatenate([np.full(len(a), j) for j, a in enumerate(np.array_split(np.arange(w), cols))])
    lm = r_id[:, None] * cols + c_id[None, :] + 1
    # more blocks than pixels along an axis leaves some ids unused
    return densify(lm)


def _region_of_points(cloud: RayCloud, parts: PartitionSet) -> np.ndarray:
    if tuple(parts.shape) != tuple(cloud.shape):
        raise ValueError("partition shape does not match the depth image")
    return parts.label_map[cloud.pixel_index[:, 0], cloud.pixel_index[:, 1]]


def detect_partitioned(cloud: RayCloud, parts: PartitionSet, ctx: InfoContext,
                       cfg: DetectorConfig = DetectorConfig(),
                       sigmas: Optional[np.ndarray] = None, refine_iters: int = 5) -> DetectionResult:
    """Detect per region (ids ascending), then the leftover set, then merge and refine.

    When a single part holds every point, its plain detection result is
    returned unchanged. Otherwise ``info`` is recomputed for the combined
    model with the image-wide point count in the mask term, while
    ``phi_trace`` keeps the region-local bookkeeping: the sum of per-region
    minima, then that sum after merge adjustments. ``audit`` carries both,
    plus the global-k information before and after refinement.
    """
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    region = _region_of_points(cloud, parts)
    order = list(range(1, parts.region_count + 1)) + [0]
    runs = []
    for r in order:
        idx = np.flatnonzero(region == r)
        if idx.size == 0:
            continue
        rcfg = parts.region_config(r, cfg)
        res = detect(cloud.subset(idx), ctx, rcfg, sigmas[idx])
        runs.append((r, idx, res, rcfg))
        logger.info("region %d: %d points, %d planes", r, idx.size, res.plane_count)

    if len(runs) == 1 and runs[0][1].size == len(cloud):
        return runs[0][2]

    k = len(cloud)
    labels = np.zeros(k, dtype=np.int64)
    planes, reductions, regions = [], [], []
    region_traces = {}
    phi_local = 0.0
    for r, idx, res, rcfg in runs:
        off = len(planes)
        lab = res.mask.labels
        labels[idx[lab > 0]] = lab[lab > 0] + off
        for p in res.planes:
            planes.append(p.plane)
            reductions.append(p.reduction_nats)
            regions.append(r)
        region_traces[str(r)] = {"points": int(idx.size), "planes": res.plane_count,
                                 "phi_trace": list(res.phi_trace), "config": rcfg.to_dict()}
        phi_local += res.info.total_nats

    merged, labels, reductions, origins, deltas = merge_pass(
        cloud, planes, labels, reductions, ctx, sigmas, None)
    phi_merged = model_information(cloud, merged, labels, ctx, sigmas).total_nats
    merged, labels, kept = refine_planes(cloud, merged, labels, ctx, sigmas, refine_iters)
    origins = [origins[j] for j in kept]
    info = model_information(cloud, merged, labels, ctx, sigmas)
    counts = np.bincount(labels, minlength=len(merged) + 1)
    detected = [DetectedPlane(pl, int(counts[j + 1]), info.per_plane[j].reduction_nats, region=regions[o])
                for j, (pl, o) in enumerate(zip(merged, origins))]
    phi_after = phi_local + float(sum(deltas))
    audit = {
        "regions": region_traces,
        "merges": deltas,
        "refine": {"phi_before": phi_merged, "phi_after": info.total_nats},
        "phi_region_local_k": phi_after,
        "phi_global_k": info.total_nats,
        "mask_nats_global_k": mask_cost(k, len(merged)) if merged else 0.0,
        "partition": parts.to_dict(),
    }
    result = DetectionResult(detected, AssignmentMask(labels, len(merged)), info, [phi_local, phi_after], audit)
    return rank_planes(result)
