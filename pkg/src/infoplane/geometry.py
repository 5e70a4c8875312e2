"""Planes n.x + d = 0: construction, canonical sign, error terms, refitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DEGENERATE_TOL = 1e-12
PARALLEL_TOL = 1e-9
Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Plane:
    """Unit normal ``normal`` and offset ``dist`` in canonical sign (d >= 0)."""

    normal: np.ndarray
    dist: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("plane normal must have unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "dist", float(self.dist))

    @classmethod
    def from_coefficients(cls, normal, dist) -> "Plane":
        """Normalise and canonicalise an arbitrary (n, d) pair."""
        n = np.asarray(normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("zero normal")
        n, d = canonicalize(n / norm, float(dist) / norm)
        return cls(n, d)

    def as_tuple(self):
        return (float(self.normal[0]), float(self.normal[1]), float(self.normal[2]), self.dist)

    def to_dict(self) -> dict:
        nx, ny, nz, d = self.as_tuple()
        return {"nx": nx, "ny": ny, "nz": nz, "d": d}

    def __eq__(self, other):
        if not isinstance(other, Plane):
            return NotImplemented
        return self.dist == other.dist and bool(np.array_equal(self.normal, other.normal))

    def __hash__(self):
        return hash(self.as_tuple())


def canonicalize(n: np.ndarray, d: float):
    """Flip (n, d) so that d >= 0; for d == 0 the first nonzero n component is positive."""
    if abs(d) <= DEGENERATE_TOL:
        d = 0.0
        nz = np.flatnonzero(np.abs(n) > DEGENERATE_TOL)
        if nz.size and n[nz[0]] < 0:
            n = -n
    elif d < 0:
        n, d = -n, -d
    n = n / np.linalg.norm(n)
    return n + 0.0, d + 0.0


def canonicalize_many(normals: np.ndarray, dists: np.ndarray):
    """Vectorised :func:`canonicalize` for (T, 3) normals and (T,) offsets."""
    normals = normals.copy()
    dists = dists.copy()
    zero = np.abs(dists) <= DEGENERATE_TOL
    dists[zero] = 0.0
    big = np.abs(normals) > DEGENERATE_TOL
    first = np.argmax(big, axis=1)
    lead = normals[np.arange(len(normals)), first]
    flip = np.where(zero, lead < 0, dists < 0)
    normals[flip] *= -1
    dists[flip] *= -1
    return normals, dists + 0.0


def plane_from_3_points(p0, p1, p2) -> Optional[Plane]:
    """Plane through three points, or ``None`` when they are (nearly) collinear."""
    p0, p1, p2 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2))
    c = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(c)
    if norm < DEGENERATE_TOL:
        return None
    n = c / norm
    n, d = canonicalize(n, -float(n @ p0))
    return Plane(n, d)


def planes_from_triples(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray):
    """Batch version returning (normals, dists, ok) for (T, 3) point arrays."""
    c = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(c, axis=1)
    ok = norm >= DEGENERATE_TOL
    safe = np.where(ok, norm, 1.0)
    n = c / safe[:, None]
    d = -np.einsum("ij,ij->i", n, p0)
    n, d = canonicalize_many(n, d)
    n[~ok] = Z_AXIS
    d[~ok] = 0.0
    return n, d, ok


def delta_normal(pl: Plane, x) -> np.ndarray:
    """Signed normal distance n.x + d; accepts one point or an (m, 3) array."""
    x = np.asarray(x, dtype=np.float64)
    out = x @ pl.normal + pl.dist
    return float(out) if out.ndim == 0 else out


def delta_ray(pl: Plane, x, ray):
    """Signed z-axis offset between x and the plane hit of its projection ray.

    Returns ``(x + d/(n.ray) * ray) . z``; NaN where the ray runs parallel to
    the plane (|n.ray| < 1e-9), which callers treat as an outlier.
    """
    x = np.asarray(x, dtype=np.float64)
    ray = np.asarray(ray, dtype=np.float64)
    ndr = ray @ pl.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x[..., 2] + pl.dist * ray[..., 2] / ndr
    out = np.where(np.abs(ndr) < PARALLEL_TOL, np.nan, out)
    return float(out) if out.ndim == 0 else out


def refit_plane(points) -> Optional[Plane]:
    """Total least squares plane through the centroid.

    The normal is the eigenvector of the smallest eigenvalue of the centred
    scatter matrix. Returns ``None`` if the two smallest eigenvalues coincide
    (points spread along fewer than two directions).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("refit_plane needs at least 3 points")
    centroid = pts.mean(axis=0)
    centred = pts - centroid
    scatter = centred.T @ centred / pts.shape[0]
    w, v = np.linalg.eigh(scatter)
    if w[1] - w[0] <= DEGENERATE_TOL * max(1.0, w[2]):
        return None
    n = v[:, 0]
    n, d = canonicalize(n, -float(n @ centroid))
    return Plane(n, d)


def angle_between_deg(n1: Sequence[float], n2: Sequence[float]) -> float:
    """Unsigned angle between plane normals in degrees (sign-invariant)."""
    c = abs(float(np.dot(n1, n2)) / (np.linalg.norm(n1) * np.linalg.norm(n2)))
    return float(np.degrees(np.arccos(min(1.0, c))))

