"""Optional cleanup of pixels claimed by the wrong plane near intersections.

Greedy extraction lets an early plane keep points of a later plane that
happen to lie within its inlier band, typically a strip along the line
where the two planes meet. Per-pixel surface normals from the depth map
tell such pixels apart. :func:`reassign` moves each pixel to the plane whose
normal agrees best, provided that plane still gives the pixel a negative
information term. The total information may rise, so this step is off by
default.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import binary_erosion, gaussian_filter

from .detector import AssignmentMask, DetectionResult, rank_planes
from .information import InfoContext, cloud_sigmas, model_information, plane_deltas, point_term
from .sensor import DepthImage, RayCloud, SensorSpec, pixel_directions

logger = logging.getLogger(__name__)


@dataclass
class NormalMap:
    """(H, W, 3) unit normals facing the camera, with a validity mask."""

    normals: np.ndarray
    valid: np.ndarray

    def at(self, cloud: RayCloud):
        r, c = cloud.pixel_index[:, 0], cloud.pixel_index[:, 1]
        return self.normals[r, c], self.valid[r, c]


def estimate_normals(img: DepthImage, spec: SensorSpec, kernel_radius: int = 1,
                     smooth_sigma_px: float = 1.0) -> NormalMap:
    """Normals from central-difference tangents of the unprojected depth map.

    Tangents span ``kernel_radius`` pixels either side along x and y; their
    cross product is normalised, oriented toward the camera, Gaussian
    smoothed component-wise (``smooth_sigma_px`` = 0 disables this) and
    renormalised. Pixels within ``kernel_radius`` of an invalid pixel or the
    border are marked invalid.
    """
    if kernel_radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    if smooth_sigma_px < 0:
        raise ValueError("smooth_sigma_px must be >= 0")
    r = int(kernel_radius)
    ok = img.valid
    z = np.where(ok, img.depth, 0.0)
    pts = pixel_directions(z.shape, spec.intrinsics) * z[..., None]

    tx = np.zeros_like(pts)
    ty = np.zeros_like(pts)
    tx[:, r:-r] = pts[:, 2 * r:] - pts[:, :-2 * r]
    ty[r:-r, :] = pts[2 * r:, :] - pts[:-2 * r, :]
    n = np.cross(tx, ty)

    valid = binary_erosion(ok, structure=np.ones((2 * r + 1, 2 * r + 1), bool), border_value=0)
    norm = np.linalg.norm(n, axis=-1)
    valid &= norm > 0
    n = np.where(valid[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    # face the camera: n . x < 0
    flip = np.einsum("ijk,ijk->ij", n, pts) > 0
    n[flip] *= -1

    if smooth_sigma_px > 0:
        n = np.stack([gaussian_filter(n[..., i], smooth_sigma_px, mode="nearest") for i in range(3)], axis=-1)
        norm = np.linalg.norm(n, axis=-1)
        valid &= norm > 1e-12
        n = np.where(valid[..., None], n / np.where(valid, norm, 1.0)[..., None], 0.0)
    return NormalMap(n, valid)


def reassign(result: DetectionResult, cloud: RayCloud, normals: NormalMap, ctx: InfoContext,
             angle_tol_deg: float = 10.0, sigmas: Optional[np.ndarray] = None) -> DetectionResult:
    """Move pixels to the plane whose normal is closest, within ``angle_tol_deg``.

    A plane qualifies for a pixel only if the pixel's information term under
    it is negative. Among qualifying planes the smallest normal angle wins,
    then the smallest |delta|. Pixels with no qualifying plane or an invalid
    normal keep their label. Plane parameters never change.
    """
    if angle_tol_deg <= 0 or result.plane_count == 0 or len(cloud) == 0:
        return result
    if sigmas is None:
        sigmas = cloud_sigmas(cloud, ctx)
    pn, pvalid = normals.at(cloud)
    planes = [p.plane for p in result.planes]
    m = len(planes)
    cos_tol = np.cos(np.radians(angle_tol_deg))

    ang = np.empty((len(cloud), m))
    adelta = np.empty((len(cloud), m))
    ok = np.empty((len(cloud), m), dtype=bool)
    for j, pl in enumerate(planes):
        c = np.abs(pn @ pl.normal)
        d = plane_deltas(cloud, pl, ctx)
        with np.errstate(invalid="ignore"):
            t = np.asarray(point_term(d, sigmas, ctx))
            ok[:, j] = pvalid & (c >= cos_tol) & (t < 0)
        ang[:, j] = np.arccos(np.clip(c, 0.0, 1.0))
        adelta[:, j] = np.abs(d)

    key_ang = np.where(ok, ang, np.inf)
    best = np.argmin(key_ang, axis=1)
    best_ang = key_ang[np.arange(len(cloud)), best]
    # break exact angle ties by |delta|
    tie = ok & (key_ang == best_ang[:, None])
    multi = tie.sum(axis=1) > 1
    if np.any(multi):
        best[multi] = np.argmin(np.where(tie[multi], adelta[multi], np.inf), axis=1)
    has = np.isfinite(best_ang)

    labels = result.mask.labels.copy()
    new = np.where(has, best + 1, labels)
    moved = int(np.count_nonzero(new != labels))
    info = model_information(cloud, planes, new, ctx, sigmas)
    counts = np.bincount(new, minlength=m + 1)
    detected = [replace(p, inlier_count=int(counts[j + 1]), reduction_nats=info.per_plane[j].reduction_nats)
                for j, p in enumerate(result.planes)]
    audit = dict(result.audit)
    audit["reassign"] = {"angle_tol_deg": angle_tol_deg, "moved": moved,
                         "phi_before": result.info.total_nats, "phi_after": info.total_nats}
    logger.info("reassign moved %d pixels, phi %.1f -> %.1f", moved, result.info.total_nats, info.total_nats)
    out = replace(result, planes=detected, mask=AssignmentMask(new, m), info=info,
                  phi_trace=list(result.phi_trace) + [info.total_nats], audit=audit)
    return rank_planes(out)
