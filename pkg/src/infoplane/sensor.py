"""Depth sensor description: intrinsics, quantisation, noise, unprojection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite intrinsics: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class SensorSpec:
    """Range R, quantisation step epsilon and pinhole intrinsics (meters / pixels).

    ``range_R`` may be left as ``None``; :func:`resolve_range` then derives it
    from the image as ``max(depth) - min(depth)`` over valid pixels.
    """

    epsilon: float
    intrinsics: Intrinsics
    range_R: Optional[float] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.range_R is not None:
            if not self.range_R > 0:
                raise ValueError("range_R must be positive")
            if not self.epsilon < self.range_R:
                raise ValueError("epsilon must be smaller than range_R")


# --------------------------------------------------------------------------
# noise models


class NoiseModel:
    """Per-point depth standard deviation as a function of measured depth."""

    kind: str = ""

    def sigma(self, z: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def spec_string(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(NoiseModel):
    sigma0: float
    kind: str = field(default="const", init=False)

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    def sigma(self, z):
        z = _check_depth(z)
        return np.full_like(z, self.sigma0) if isinstance(z, np.ndarray) else float(self.sigma0)

    def to_dict(self):
        return {"kind": "const", "sigma": self.sigma0}

    def spec_string(self):
        return f"const:{self.sigma0!r}"


@dataclass(frozen=True)
class Proportional(NoiseModel):
    alpha: float
    kind: str = field(default="prop", init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def sigma(self, z):
        z = _check_depth(z)
        return self.alpha * z

    def to_dict(self):
        return {"kind": "prop", "alpha": self.alpha}

    def spec_string(self):
        return f"prop:{self.alpha!r}"


@dataclass(frozen=True)
class QuadraticExperimental(NoiseModel):
    """sigma(z) = a + b * (z - z0)**2, e.g. the Kinect fit a=0.0012, b=0.0019, z0=0.4."""

    a: float
    b: float
    z0: float
    kind: str = field(default="quad", init=False)

    def __post_init__(self):
        if not self.a > 0 or self.b < 0:
            raise ValueError("quadratic noise needs a > 0 and b >= 0")

    def sigma(self, z):
        z = _check_depth(z)
        return self.a + self.b * (z - self.z0) ** 2

    def to_dict(self):
        return {"kind": "quad", "a": self.a, "b": self.b, "z0": self.z0}

    def spec_string(self):
        return f"quad:{self.a!r},{self.b!r},{self.z0!r}"


KINECT_NOISE = QuadraticExperimental(0.0012, 0.0019, 0.4)
PROPORTIONAL_NOISE = Proportional(0.01)


def _check_depth(z):
    if isinstance(z, np.ndarray):
        if np.any(~(z > 0)):
            raise ValueError("noise model evaluated at non-positive depth")
        return z.astype(float, copy=False)
    z = float(z)
    if not z > 0:
        raise ValueError(f"noise model evaluated at non-positive depth {z}")
    return z


def sigma_at(model: NoiseModel, z: ArrayLike) -> ArrayLike:
    """Standard deviation of the depth reading at depth ``z`` (meters)."""
    return model.sigma(z)


def parse_noise(text: str) -> NoiseModel:
    """Parse ``const:<s>``, ``prop:<alpha>`` or ``quad:<a>,<b>,<z0>``."""
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        vals = [float(v) for v in rest.split(",")] if rest else []
    except ValueError as exc:
        raise ValueError(f"bad noise parameters in {text!r}") from exc
    if kind in ("const", "constant") and len(vals) == 1:
        return Constant(vals[0])
    if kind in ("prop", "proportional") and len(vals) == 1:
        return Proportional(vals[0])
    if kind in ("quad", "quadratic") and len(vals) == 3:
        return QuadraticExperimental(*vals)
    raise ValueError(f"cannot parse noise model {text!r}")


def noise_from_dict(d: dict) -> NoiseModel:
    kind = str(d.get("kind", "")).lower()
    if kind in ("const", "constant"):
        return Constant(float(d["sigma"]))
    if kind in ("prop", "proportional"):
        return Proportional(float(d["alpha"]))
    if kind in ("quad", "quadratic"):
        return QuadraticExperimental(float(d["a"]), float(d["b"]), float(d["z0"]))
    raise ValueError(f"unknown noise kind {kind!r}")


def sensor_from_dict(d: dict):
    """Parse ``{fx, fy, cx, cy, epsilon_m, range_m?, noise?}``.

    Returns ``(SensorSpec, NoiseModel or None)``; missing or malformed keys
    raise ValueError.
    """
    if not isinstance(d, dict):
        raise ValueError("sensor description must be a JSON object")
    try:
        intr = Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))
        eps = float(d.get("epsilon_m", 0.01))
        rng = d.get("range_m")
        spec = SensorSpec(eps, intr, None if rng is None else float(rng))
        noise = noise_from_dict(d["noise"]) if d.get("noise") else None
    except KeyError as exc:
        raise ValueError(f"sensor description lacks {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad sensor description: {exc}") from None
    return spec, noise


def sensor_to_dict(spec: SensorSpec, noise: Optional[NoiseModel] = None) -> dict:
    i = spec.intrinsics
    out = {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, "epsilon_m": spec.epsilon}
    if spec.range_R is not None:
        out["range_m"] = spec.range_R
    if noise is not None:
        out["noise"] = noise.to_dict()
    return out


# --------------------------------------------------------------------------
# depth images


@dataclass(frozen=True)
class DepthImage:
    """Row-major depth grid in meters; 0 (or non-finite) marks an invalid pixel."""

    depth: np.ndarray

    def __post_init__(self):
        if self.depth.ndim != 2 or self.depth.size == 0:
            raise ValueError("depth must be a non-empty 2D array")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        d = self.depth
        return np.isfinite(d) & (d > 0)

    @classmethod
    def from_millimeters(cls, mm: np.ndarray) -> "DepthImage":
        return cls(np.asarray(mm, dtype=np.float64) / 1000.0)

    def to_millimeters(self) -> np.ndarray:
        d = np.where(self.valid, self.depth, 0.0)
        mm = np.floor(d * 1000.0 + 0.5)
        if mm.max(initial=0) > 65535:
            raise ValueError("depth exceeds 16-bit millimeter range")
        return mm.astype(np.uint16)


def resolve_range(img: DepthImage, spec: SensorSpec) -> float:
    """Return the configured range or ``max - min`` of the valid depths."""
    if spec.range_R is not None:
        return spec.range_R
    d = img.depth[img.valid]
    if d.size == 0:
        return 1.0
    r = float(d.max() - d.min())
    if r <= 2 * spec.epsilon:
        # flat image: fall back to the far end of the observed depths
        logger.warning("depth span %.4g too small for a range; using max depth", r)
        r = float(d.max())
    return r


def quantize(depth: ArrayLike, spec: SensorSpec):
    """Snap depth(s) to the nearest multiple of epsilon, half away from zero.

    Values outside ``[0, spec.range_R]`` are clamped and reported with a
    warning. The upper clamp only applies when the sensor range is fixed;
    an image-derived range is a span, not an absolute limit.
    """
    eps = spec.epsilon
    arr = np.asarray(depth, dtype=np.float64)
    hi = np.inf if spec.range_R is None else spec.range_R
    out_of_range = (arr < 0.0) | (arr > hi)
    n_clamped = int(np.count_nonzero(out_of_range))
    if n_clamped:
        logger.warning("quantize: clamped %d out-of-range depth value(s)", n_clamped)
        arr = np.clip(arr, 0.0, hi)
    q = arr / eps
    # guard against x/eps landing a hair below the .5 boundary (2.005/0.01)
    steps = np.floor(q + 0.5 + 1e-9 * np.maximum(1.0, q))
    out = steps * eps
    if np.ndim(depth) == 0:
        return float(out)
    return out


def quantize_image(img: DepthImage, spec: SensorSpec) -> DepthImage:
    valid = img.valid
    q = quantize(np.where(valid, img.depth, 0.0), spec)
    return DepthImage(np.where(valid, q, 0.0))


# --------------------------------------------------------------------------
# unprojection


@dataclass(frozen=True)
class RayCloud:
    """Valid pixels as 3D points with their unit projection rays.

    ``pixel_index`` holds the (row, col) of each point; ``shape`` is the
    source image shape and ``n_invalid`` counts skipped pixels.
    """

    points: np.ndarray
    rays: np.ndarray
    pixel_index: np.ndarray
    shape: tuple = (0, 0)
    n_invalid: int = 0

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, idx: np.ndarray) -> "RayCloud":
        return RayCloud(self.points[idx], self.rays[idx], self.pixel_index[idx], self.shape, 0)

    def label_image(self, labels: np.ndarray, fill: int = 0) -> np.ndarray:
        """Scatter per-point labels back onto the pixel grid."""
        out = np.full(self.shape, fill, dtype=np.int64)
        out[self.pixel_index[:, 0], self.pixel_index[:, 1]] = labels
        return out

    def flat_index(self) -> np.ndarray:
        return self.pixel_index[:, 0] * self.shape[1] + self.pixel_index[:, 1]


def pixel_directions(shape, intr: Intrinsics) -> np.ndarray:
    """(H, W, 3) array of un-normalised ray directions with z = 1."""
    h, w = shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)


def unproject(img: DepthImage, spec: SensorSpec) -> RayCloud:
    """Back-project every valid pixel: x = z * ((u - cx)/fx, (v - cy)/fy, 1)."""
    valid = img.valid
    rows, cols = np.nonzero(valid)
    z = img.depth[rows, cols]
    intr = spec.intrinsics
    q = np.stack([(cols - intr.cx) / intr.fx, (rows - intr.cy) / intr.fy, np.ones_like(z)], axis=1)
    points = q * z[:, None]
    points[:, 2] = z
    rays = q / np.linalg.norm(q, axis=1, keepdims=True)
    n_invalid = int(valid.size - rows.size)
    if n_invalid:
        logger.debug("unproject: skipped %d invalid pixel(s)", n_invalid)
    return RayCloud(points, rays, np.stack([rows, cols], axis=1), tuple(img.depth.shape), n_invalid)


def check_quantization(cloud: RayCloud, noise: NoiseModel, epsilon: float) -> float:
    """Fraction of points with epsilon > sigma(z); warns above 1%."""
    if len(cloud) == 0:
        return 0.0
    frac = float(np.mean(epsilon > noise.sigma(cloud.points[:, 2])))
    if frac > 0.01:
        logger.warning(
            "epsilon=%.4g exceeds sigma(z) for %.1f%% of points; the midpoint "
            "approximation of the Gaussian bin assumes epsilon << sigma",
            epsilon, 100 * frac,
        )
    return frac
