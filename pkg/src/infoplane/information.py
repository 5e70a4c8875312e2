"""Information accounting (nats) for plane / outlier models.

Two variants share one per-point term. ``GENERIC`` treats points as free
3D samples scored by normal distance (3 ln(R/eps) per outlier);
``DEPTH_IMAGE`` pins each point to its projection ray, so an outlier costs
ln(R/eps) and the error is the z-offset along the ray.

Assigning a point to a plane instead of the outlier class changes the
model information by

    -ln(R/eps) + delta^2 / (2 sigma^2) + 0.5 ln(2 pi sigma^2 / eps^2)

in both variants. A plane's parameters cost 3 ln(R/eps), and the assignment
mask for N planes costs k ln(N + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence

import numpy as np

from .geometry import Plane, delta_normal, delta_ray
from .sensor import NoiseModel, RayCloud

LOG_2PI = math.log(2.0 * math.pi)


class Variant(str, Enum):
    GENERIC = "generic"
    DEPTH_IMAGE = "depth"


@dataclass(frozen=True)
class InfoContext:
    """Discretisation context: R/eps, eps, score variant and noise model."""

    ratio: float
    epsilon: float
    noise: NoiseModel
    variant: Variant = Variant.DEPTH_IMAGE

    def __post_init__(self):
        if not self.ratio > 1:
            raise ValueError("R/epsilon must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def log_ratio(self) -> float:
        return math.log(self.ratio)

    @property
    def n_eff(self) -> int:
        """Free coordinates per outlier point: 3 for free points, 1 on a ray."""
        return 3 if self.variant is Variant.GENERIC else 1

    @classmethod
    def from_range(cls, range_R: float, epsilon: float, noise: NoiseModel,
                   variant: Variant = Variant.DEPTH_IMAGE) -> "InfoContext":
        return cls(range_R / epsilon, epsilon, noise, variant)


def phi_zero(k: int, ctx: InfoContext) -> float:
    """Information of the all-outlier model: k * n_eff * ln(R/eps)."""
    return k * ctx.n_eff * ctx.log_ratio


def point_term(delta, sigma, ctx: InfoContext):
    """Information change when one point moves from outlier to a plane."""
    delta = np.asarray(delta, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    out = (-ctx.log_ratio + 0.5 * (delta / sigma) ** 2
           + 0.5 * (LOG_2PI + 2.0 * np.log(sigma / ctx.epsilon)))
    return float(out) if out.ndim == 0 else out


def point_base(sigma, ctx: InfoContext):
    """The delta-independent part of :func:`point_term` (its value at delta = 0)."""
    return point_term(0.0 * np.asarray(sigma), sigma, ctx)


def is_inlier(delta, sigma, ctx: InfoContext):
    """True iff the point's information change is strictly negative."""
    out = np.asarray(point_term(delta, sigma, ctx)) < 0
    return bool(out) if out.ndim == 0 else out


def inlier_bound(sigma, ctx: InfoContext):
    """|delta| at which point_term crosses zero (NaN if no delta qualifies)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    slack = ctx.log_ratio - 0.5 * (LOG_2PI + 2.0 * np.log(sigma / ctx.epsilon))
    with np.errstate(invalid="ignore"):
        out = np.where(slack > 0, sigma * np.sqrt(2.0 * np.maximum(slack, 0.0)), np.nan)
    return float(out) if out.ndim == 0 else out


def plane_param_cost(ctx: InfoContext) -> float:
    """Parameters of one plane: three coordinates' worth, 3 ln(R/eps)."""
    return 3.0 * ctx.log_ratio


def mask_increment(k: int, n: int) -> float:
    """Growth of the mask term k ln(N + 1) when going from N - 1 to N planes."""
    if n < 1:
        raise ValueError("plane index starts at 1")
    return k * math.log((n + 1) / n)


def mask_cost(k: int, n: int) -> float:
    return k * math.log(n + 1)


def cloud_sigmas(cloud: RayCloud, ctx: InfoContext) -> np.ndarray:
    """sigma evaluated at each point's measured depth."""
    if len(cloud) == 0:
        return np.zeros(0)
    return np.asarray(ctx.noise.sigma(cloud.points[:, 2]), dtype=np.float64)


def plane_deltas(cloud: RayCloud, plane: Plane, ctx: InfoContext, idx=None) -> np.ndarray:
    pts = cloud.points if idx is None else cloud.points[idx]
    if ctx.variant is Variant.GENERIC:
        return delta_normal(plane, pts)
    rays = cloud.rays if idx is None else cloud.rays[idx]
    return delta_ray(plane, pts, rays)


def plane_terms(cloud: RayCloud, plane: Plane, ctx: InfoContext, idx=None, sigmas=None) -> np.ndarray:
    """Per-point :func:`point_term` under ``plane``; +inf where delta is undefined."""
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    s = sigmas if idx is None else sigmas[idx]
    t = point_term(plane_deltas(cloud, plane, ctx, idx), s, ctx)
    t = np.atleast_1d(t)
    return np.where(np.isnan(t), np.inf, t)


@dataclass
class PlaneInformation:
    param_nats: float
    inlier_nats: float
    reduction_nats: float
    inlier_count: int = 0


@dataclass
class ModelInformation:
    """Total model information and its breakdown.

    ``total_nats = mask_nats + outlier_nats + sum(param_nats + inlier_nats)``.
    """

    total_nats: float
    mask_nats: float
    outlier_nats: float
    per_plane: List[PlaneInformation] = field(default_factory=list)

    def check(self, rel: float = 1e-9) -> bool:
        parts = self.mask_nats + self.outlier_nats + sum(p.param_nats + p.inlier_nats for p in self.per_plane)
        return abs(parts - self.total_nats) <= rel * max(1.0, abs(self.total_nats))

    def to_dict(self) -> dict:
        return {
            "total_nats": self.total_nats,
            "mask_nats": self.mask_nats,
            "outlier_nats": self.outlier_nats,
            "per_plane": [
                {"param_nats": p.param_nats, "inlier_nats": p.inlier_nats,
                 "reduction_nats": p.reduction_nats, "inliers": p.inlier_count}
                for p in self.per_plane
            ],
        }


def model_information(cloud: RayCloud, planes: Sequence[Plane], labels, ctx: InfoContext,
                      sigmas=None) -> ModelInformation:
    """Evaluate the full model information of (planes, assignment) directly.

    ``labels[i]`` is 0 for an outlier or the 1-based index into ``planes``.
    Inliers whose error is undefined (ray parallel to plane) raise.
    """
    labels = np.asarray(getattr(labels, "labels", labels))
    k = len(cloud)
    if labels.shape != (k,):
        raise ValueError("mask length does not match cloud size")
    n = len(planes)
    if k and (labels.min() < 0 or labels.max() > n):
        raise ValueError("mask label out of range")
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    lr = ctx.log_ratio
    k0 = int(np.count_nonzero(labels == 0))
    mask_nats = mask_cost(k, n) if n else 0.0
    outlier_nats = k0 * ctx.n_eff * lr
    per_plane = []
    for j, pl in enumerate(planes, start=1):
        idx = np.flatnonzero(labels == j)
        delta = plane_deltas(cloud, pl, ctx, idx)
        if np.any(np.isnan(delta)):
            raise ValueError(f"plane {j} has inliers with undefined ray error")
        s = sigmas[idx]
        gauss = 0.5 * (delta / s) ** 2 + 0.5 * (LOG_2PI + 2.0 * np.log(s / ctx.epsilon))
        inlier_nats = float(np.sum((ctx.n_eff - 1) * lr + gauss))
        reduction = float(np.sum(gauss - lr))
        per_plane.append(PlaneInformation(3.0 * lr, inlier_nats, reduction, int(idx.size)))
    total = mask_nats + outlier_nats + sum(p.param_nats + p.inlier_nats for p in per_plane)
    return ModelInformation(float(total), float(mask_nats), float(outlier_nats), per_plane)
