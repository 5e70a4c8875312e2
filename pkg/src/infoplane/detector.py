"""Greedy plane extraction by model information minimisation.

Each round draws random 3-point samples from the still-unassigned points,
scores every sampled plane by the summed information change of the points
it would claim (only strictly negative terms count), and freezes the best
plane's inliers. The model information after N planes is

    phi[N] = phi[N - 1] + k ln((N + 1) / N) + 3 ln(R/eps) + reduction_N

and the final model is the prefix with the smallest phi.

Reproducibility: sampling uses ``numpy.random.Generator(PCG64(seed))`` and
only its ``random()`` doubles; index triples are derived from those doubles
by the sequential floor construction in :func:`sample_triples`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .geometry import Plane, planes_from_triples, refit_plane
from .information import (
    InfoContext,
    ModelInformation,
    Variant,
    cloud_sigmas,
    mask_increment,
    model_information,
    phi_zero,
    plane_param_cost,
    plane_terms,
    point_base,
)
from .sensor import RayCloud

logger = logging.getLogger(__name__)

# elements per (points x trials) scoring block
_BLOCK = 1 << 21


@dataclass
class AssignmentMask:
    """Per-point labels: 0 = outlier, j = j-th plane (1-based)."""

    labels: np.ndarray
    plane_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > self.plane_count):
            raise ValueError("label exceeds plane count")

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.plane_count + 1)


@dataclass(frozen=True)
class DetectorConfig:
    confidence_c: float = 0.99
    inlier_ratio_r: float = 0.25
    max_planes_N: int = 8
    min_inliers: int = 3
    seed: int = 0
    refit: bool = True
    early_stop_patience: int = 2
    trials: Optional[int] = None
    max_refit_iters: int = 1

    def __post_init__(self):
        if not 0 < self.confidence_c < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if not 0 < self.inlier_ratio_r <= 1:
            raise ValueError("inlier ratio must lie in (0, 1]")
        if self.max_planes_N < 1:
            raise ValueError("max_planes_N must be >= 1")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_refit_iters < 0:
            raise ValueError("max_refit_iters must be >= 0")

    @property
    def n_trials(self) -> int:
        return self.trials if self.trials is not None else trial_count(self.confidence_c, self.inlier_ratio_r)

    def to_dict(self) -> dict:
        return {
            "confidence_c": self.confidence_c,
            "inlier_ratio_r": self.inlier_ratio_r,
            "max_planes_N": self.max_planes_N,
            "min_inliers": self.min_inliers,
            "seed": self.seed,
            "refit": self.refit,
            "early_stop_patience": self.early_stop_patience,
            "trials": self.n_trials,
            "max_refit_iters": self.max_refit_iters,
        }


@dataclass
class DetectedPlane:
    plane: Plane
    inlier_count: int
    reduction_nats: float
    rank: int = 0
    region: int = 0


@dataclass
class DetectionResult:
    planes: List[DetectedPlane]
    mask: AssignmentMask
    info: ModelInformation
    phi_trace: List[float]
    audit: dict = field(default_factory=dict)

    @property
    def plane_count(self) -> int:
        return len(self.planes)


@dataclass
class Candidate:
    plane: Plane
    inliers: np.ndarray  # indices into the cloud
    reduction_nats: float
    trial: int


def trial_count(c: float, r: float) -> int:
    """Samples needed to draw one all-inlier triple with confidence c."""
    if not 0 < c < 1 or not 0 < r <= 1:
        raise ValueError("need 0 < c < 1 and 0 < r <= 1")
    if r == 1:
        return 1
    return int(math.ceil(math.log1p(-c) / math.log1p(-r ** 3)))


def sample_triples(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    """``n`` triples of distinct indices drawn uniformly from ``range(m)``."""
    if m < 3:
        raise ValueError("need at least 3 points to sample")
    u = rng.random((n, 3))
    i0 = np.floor(u[:, 0] * m).astype(np.int64)
    i1 = np.floor(u[:, 1] * (m - 1)).astype(np.int64)
    i1 += i1 >= i0
    lo = np.minimum(i0, i1)
    hi = np.maximum(i0, i1)
    i2 = np.floor(u[:, 2] * (m - 2)).astype(np.int64)
    i2 += i2 >= lo
    i2 += i2 >= hi
    return np.stack([i0, i1, i2], axis=1)


class _Scorer:
    """Evaluates many candidate planes against one fixed point subset."""

    def __init__(self, cloud: RayCloud, idx: np.ndarray, ctx: InfoContext, sigmas: np.ndarray):
        self.cloud, self.idx, self.ctx = cloud, idx, ctx
        self.pts = cloud.points[idx]
        self.rays = cloud.rays[idx]
        s = sigmas[idx]
        self.sigmas = s
        self.base = np.asarray(point_base(s, ctx)).reshape(-1)
        self.inv2s2 = 0.5 / s ** 2
        # delta^2 below this bound <=> strictly negative term
        self.bound2 = np.where(self.base < 0, -self.base / self.inv2s2, -1.0)

    def deltas(self, normals: np.ndarray, dists: np.ndarray) -> np.ndarray:
        if self.ctx.variant is Variant.GENERIC:
            return self.pts @ normals.T + dists[None, :]
        ndr = self.rays @ normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.pts[:, 2:3] + self.rays[:, 2:3] * dists[None, :] / ndr
        out[np.abs(ndr) < 1e-9] = np.nan
        return out

    def score(self, normals: np.ndarray, dists: np.ndarray):
        """Summed negative terms and inlier counts for each (normal, dist)."""
        m = self.pts.shape[0]
        t = normals.shape[0]
        red = np.empty(t)
        cnt = np.empty(t, dtype=np.int64)
        step = max(1, _BLOCK // max(m, 1))
        for a in range(0, t, step):
            b = min(t, a + step)
            d2 = self.deltas(normals[a:b], dists[a:b]) ** 2
            with np.errstate(invalid="ignore"):
                inl = d2 < self.bound2[:, None]
            terms = self.base[:, None] + d2 * self.inv2s2[:, None]
            red[a:b] = np.where(inl, terms, 0.0).sum(axis=0)
            cnt[a:b] = inl.sum(axis=0)
        return red, cnt

    def terms(self, plane: Plane) -> np.ndarray:
        d2 = self.deltas(plane.normal[None, :], np.array([plane.dist]))[:, 0] ** 2
        t = self.base + d2 * self.inv2s2
        return np.where(np.isnan(t), np.inf, t)


def best_candidate(cloud: RayCloud, unassigned: np.ndarray, ctx: InfoContext, cfg: DetectorConfig,
                   rng: np.random.Generator, sigmas: Optional[np.ndarray] = None) -> Optional[Candidate]:
    """Most informative sampled plane over the ``unassigned`` cloud indices.

    Returns ``None`` when fewer than three points remain, when no sample
    yields a negative summed reduction, or when the winner has fewer than
    ``cfg.min_inliers`` inliers.
    """
    unassigned = np.asarray(unassigned, dtype=np.int64)
    m = unassigned.size
    if m < 3:
        return None
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    scorer = _Scorer(cloud, unassigned, ctx, sigmas)
    triples = sample_triples(rng, m, cfg.n_trials)
    p = scorer.pts
    normals, dists, ok = planes_from_triples(p[triples[:, 0]], p[triples[:, 1]], p[triples[:, 2]])
    red, _ = scorer.score(normals, dists)
    red[~ok] = np.inf
    best = int(np.argmin(red))  # first index wins ties
    if not np.isfinite(red[best]):
        return None
    plane = Plane(normals[best], dists[best])
    terms = scorer.terms(plane)
    inl = terms < 0
    reduction = float(np.sum(terms[inl]))

    if cfg.refit:
        for _ in range(cfg.max_refit_iters):
            if np.count_nonzero(inl) < 3:
                break
            fitted = refit_plane(p[inl])
            if fitted is None:
                break
            t2 = scorer.terms(fitted)
            inl2 = t2 < 0
            red2 = float(np.sum(t2[inl2]))
            if not red2 < reduction:
                break
            plane, terms, inl, reduction = fitted, t2, inl2, red2

    count = int(np.count_nonzero(inl))
    if reduction >= 0 or count < cfg.min_inliers:
        return None
    return Candidate(plane, unassigned[inl], reduction, best)


def detect(cloud: RayCloud, ctx: InfoContext, cfg: DetectorConfig = DetectorConfig(),
           sigmas: Optional[np.ndarray] = None) -> DetectionResult:
    """Extract planes one at a time and keep the prefix of minimal information."""
    k = len(cloud)
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    labels = np.zeros(k, dtype=np.int64)
    phi = [phi_zero(k, ctx)]
    steps = []
    found: List[Candidate] = []
    failures = 0
    param = plane_param_cost(ctx)
    while len(found) < cfg.max_planes_N and failures < cfg.early_stop_patience:
        unassigned = np.flatnonzero(labels == 0)
        if unassigned.size < 3:
            break
        cand = best_candidate(cloud, unassigned, ctx, cfg, rng, sigmas)
        if cand is None:
            failures += 1
            continue
        failures = 0
        found.append(cand)
        n = len(found)
        labels[cand.inliers] = n
        inc = mask_increment(k, n)
        phi.append(phi[-1] + inc + param + cand.reduction_nats)
        steps.append({"mask_increment": inc, "param_cost": param, "reduction": cand.reduction_nats,
                      "inliers": int(cand.inliers.size), "trial": cand.trial})
        logger.debug("round %d: %d inliers, reduction %.1f, phi %.1f", n, cand.inliers.size,
                     cand.reduction_nats, phi[-1])

    n_best = int(np.argmin(phi))
    found = found[:n_best]
    labels[labels > n_best] = 0
    planes = [c.plane for c in found]
    info = model_information(cloud, planes, labels, ctx, sigmas)
    detected = [DetectedPlane(c.plane, int(c.inliers.size), c.reduction_nats) for c in found]
    result = DetectionResult(detected, AssignmentMask(labels, len(planes)), info, phi,
                             {"steps": steps, "n_best": n_best, "trials": cfg.n_trials})
    return rank_planes(result)


def rank_planes(result: DetectionResult) -> DetectionResult:
    """Order planes by reduction (most negative first), stable on ties."""
    order = sorted(range(len(result.planes)), key=lambda i: result.planes[i].reduction_nats)
    remap = np.zeros(len(result.planes) + 1, dtype=np.int64)
    for new, old in enumerate(order, start=1):
        remap[old + 1] = new
    planes = [replace(result.planes[old], rank=new) for new, old in enumerate(order, start=1)]
    labels = remap[result.mask.labels]
    per_plane = result.info.per_plane
    if len(per_plane) == len(order):
        per_plane = [per_plane[i] for i in order]
    info = replace(result.info, per_plane=per_plane)
    return replace(result, planes=planes, mask=AssignmentMask(labels, len(planes)), info=info)


def merge_pass(cloud: RayCloud, planes: Sequence[Plane], labels: np.ndarray, reductions: Sequence[float],
               ctx: InfoContext, sigmas: np.ndarray, mask_k: Optional[int]):
    """Absorb lower-ranked planes into better ones until nothing changes.

    For a pair (a better, b worse) two merged models are tried: b's points
    scored under a's parameters (allowed only when their summed terms are
    negative), and one plane refitted to the union of both inlier sets.
    The candidate that lowers the model information most is applied, if it
    lowers it at all: points with a negative term join the merged plane,
    the rest become outliers, and one plane's parameters (plus the mask
    growth, when ``mask_k`` is given) are saved.
    Returns (planes, labels, reductions, origins, deltas) where ``origins``
    maps each surviving plane to its input position.
    """
    planes = list(planes)
    reductions = list(reductions)
    origins = list(range(len(planes)))
    labels = labels.copy()
    param = plane_param_cost(ctx)
    deltas = []
    changed = True
    while changed:
        changed = False
        order = sorted(range(len(planes)), key=lambda i: reductions[i])
        for ai, a in enumerate(order):
            for b in order[ai + 1:]:
                saving = param + (mask_increment(mask_k, len(planes)) if mask_k is not None else 0.0)
                best = _merge_candidate(cloud, planes, labels, reductions, a, b, ctx, sigmas, saving)
                if best is None:
                    continue
                d_phi, plane, idx, t = best
                labels[labels == b + 1] = 0
                labels[idx[t < 0]] = a + 1
                labels[idx[t >= 0]] = 0
                planes[a] = plane
                reductions[a] = float(np.sum(t[t < 0]))
                del planes[b], reductions[b], origins[b]
                labels[labels > b + 1] -= 1
                deltas.append(d_phi)
                changed = True
                break
            if changed:
                break
    return planes, labels, reductions, origins, deltas


def _merge_candidate(cloud, planes, labels, reductions, a, b, ctx, sigmas, saving):
    """Best (d_phi, plane, point indices, terms) for merging b into a, or None."""
    idx_a = np.flatnonzero(labels == a + 1)
    idx_b = np.flatnonzero(labels == b + 1)
    before = reductions[a] + reductions[b]
    options = []
    t_b = plane_terms(cloud, planes[a], ctx, idx_b, sigmas) if idx_b.size else np.zeros(0)
    if np.sum(t_b) < 0:
        idx = np.concatenate([idx_a, idx_b])
        t = np.concatenate([plane_terms(cloud, planes[a], ctx, idx_a, sigmas) if idx_a.size else np.zeros(0), t_b])
        options.append((planes[a], idx, t))
    union = np.concatenate([idx_a, idx_b])
    if union.size >= 3:
        fitted = refit_plane(cloud.points[union])
        if fitted is not None:
            options.append((fitted, union, plane_terms(cloud, fitted, ctx, union, sigmas)))
    best = None
    for plane, idx, t in options:
        d_phi = float(np.sum(np.minimum(t, 0.0))) - before - saving
        if d_phi < 0 and (best is None or d_phi < best[0]):
            best = (d_phi, plane, idx, t)
    return best


def refine_planes(cloud: RayCloud, planes: Sequence[Plane], labels: np.ndarray, ctx: InfoContext,
                  sigmas: np.ndarray, iters: int = 5):
    """Alternate point reassignment and plane refits while the information drops.

    Each round gives every point to the label with the smallest term
    (outlier = 0), refits each plane to its points by total least squares
    and reassigns once more. A round is kept only if it lowers the total
    information, so the result is never worse than the input. Planes left
    with no points are dropped. This undoes most of the crease bias of the
    greedy pass, where an early plane keeps points of a later neighbour.
    Returns (planes, labels, origins).
    """
    planes = list(planes)
    labels = np.asarray(labels, dtype=np.int64).copy()
    origins = list(range(len(planes)))
    if not planes or iters <= 0:
        return planes, labels, origins
    phi = model_information(cloud, planes, labels, ctx, sigmas).total_nats
    for _ in range(iters):
        moved = _argmin_labels(cloud, planes, ctx, sigmas)
        fitted = [refit_plane(cloud.points[moved == j + 1]) if np.count_nonzero(moved == j + 1) >= 3 else pl
                  for j, pl in enumerate(planes)]
        new = _argmin_labels(cloud, fitted, ctx, sigmas)
        keep = [j for j in range(len(fitted)) if np.any(new == j + 1)]
        if len(keep) < len(fitted):
            lut = np.zeros(len(fitted) + 1, dtype=np.int64)
            lut[[j + 1 for j in keep]] = np.arange(1, len(keep) + 1)
            new = lut[new]
            fitted = [fitted[j] for j in keep]
        trial_phi = model_information(cloud, fitted, new, ctx, sigmas).total_nats
        if not trial_phi < phi:
            break
        origins = [origins[j] for j in keep]
        planes, labels, phi = fitted, new, trial_phi
    return planes, labels, origins


def _argmin_labels(cloud, planes, ctx, sigmas):
    terms = np.zeros((len(cloud), len(planes) + 1))
    for j, pl in enumerate(planes):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms[:, j + 1] = plane_terms(cloud, pl, ctx, sigmas=sigmas)
    return np.argmin(terms, axis=1)


def merge_planes(result: DetectionResult, cloud: RayCloud, ctx: InfoContext,
                 sigmas: Optional[np.ndarray] = None, refine_iters: int = 5) -> DetectionResult:
    """Merge planes whose inliers are explained more cheaply by a better plane.

    The merged model is then polished with :func:`refine_planes`
    (``refine_iters`` = 0 skips this). Never increases the total model
    information; the result is re-ranked and its information recomputed.
    """
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    planes = [p.plane for p in result.planes]
    # stored reductions may come from another context (per-region runs)
    before = model_information(cloud, planes, result.mask.labels, ctx, sigmas)
    reductions = [p.reduction_nats for p in before.per_plane]
    new_planes, labels, reductions, origins, deltas = merge_pass(
        cloud, planes, result.mask.labels, reductions, ctx, sigmas, len(cloud))
    new_planes, labels, kept = refine_planes(cloud, new_planes, labels, ctx, sigmas, refine_iters)
    origins = [origins[j] for j in kept]
    info = model_information(cloud, new_planes, labels, ctx, sigmas)
    if not deltas and not info.total_nats < before.total_nats:
        return result
    counts = np.bincount(labels, minlength=len(new_planes) + 1)
    detected = [
        replace(result.planes[o], plane=pl, inlier_count=int(counts[j + 1]),
                reduction_nats=info.per_plane[j].reduction_nats)
        for j, (pl, o) in enumerate(zip(new_planes, origins))
    ]
    audit = dict(result.audit)
    audit["merges"] = audit.get("merges", []) + deltas
    audit["refine"] = {"phi_before": before.total_nats, "phi_after": info.total_nats}
    merged = DetectionResult(detected, AssignmentMask(labels, len(new_planes)), info,
                             list(result.phi_trace) + [info.total_nats], audit)
    return rank_planes(merged)
