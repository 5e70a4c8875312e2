"""Synthetic depth scenes with known planes and per-pixel ground truth.

Every scene is a set of planar faces in camera coordinates. Each pixel ray
is intersected with every face and the nearest hit wins; the exact depth is
then perturbed by N(0, noise_sigma^2) and quantised.

Default camera: 160 x 120 pixels, fx = fy = 120, principal point at the
image centre; the focal length scales with image width so other sizes see
the same field of view. The two-plane corner uses a wider lens. Scene
constants below are the documented defaults; the acceptance numbers are
stated against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .detector import AssignmentMask
from .geometry import Plane
from .sensor import DepthImage, Intrinsics, SensorSpec, pixel_directions, quantize

DEFAULT_SIZE = (160, 120)
FULL_SIZE = (640, 480)
DEFAULT_FOCAL = 120.0

# staircase: camera 0.9 m above the floor line, pitched 45 deg down, with the
# first riser 0.8 m ahead; the lowest riser reaches below the view and the
# top tread is 1 m deep. Faces cover ~57/16/15/12% of a 160x120 image.
STAIR_CAMERA_HEIGHT = 0.9
STAIR_PITCH_DEG = 45.0
STAIR_YAW_DEG = 0.0
STAIR_TOP_RUN = 1.0

# two-plane corner: camera on the bisector 1.5 m from the crease, pitched
# 10 deg, with a wide lens (58 deg half field of view) so each face is large
# next to the inlier band around the crease
TWO_PLANE_PITCH_DEG = 10.0
TWO_PLANE_YAW_DEG = 0.0
TWO_PLANE_FOCAL = 50.0

TWO_PLANE_ANGLES = tuple(range(95, 176, 10))
TJUNCTION_STRIP_TOL = 0.01


def default_intrinsics(width: int, height: int, focal: Optional[float] = None) -> Intrinsics:
    """Centred pinhole; ``focal`` is in pixels at 160 px width and scales with ``width``."""
    f = (DEFAULT_FOCAL if focal is None else focal) * width / DEFAULT_SIZE[0]
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True)
class Staircase:
    steps: int = 2
    step_rise: float = 0.2
    step_run: float = 0.3
    distance: float = 0.8


@dataclass(frozen=True)
class Tetrahedron:
    base_z: float = 2.0
    apex_height: float = 0.5
    base_scale: float = 1.3


@dataclass(frozen=True)
class SinusoidQuad:
    frequencies: Tuple[float, ...] = (0.0, 2.0, 10.0, 100.0)
    amplitude: float = 0.005


@dataclass(frozen=True)
class TwoPlane:
    intersection_angle_deg: float = 135.0
    distance: float = 1.5


@dataclass(frozen=True)
class TJunction:
    """A near plane and a farther, tilted plane whose extension cuts the near one."""

    front_z: float = 1.5
    slope_per_px: float = 0.005
    strip_offset_px: int = 15


@dataclass(frozen=True)
class SceneSpec:
    kind: object
    width: int = DEFAULT_SIZE[0]
    height: int = DEFAULT_SIZE[1]
    intrinsics: Optional[Intrinsics] = None
    noise_sigma: float = 0.005
    seed: int = 0
    quant_step: float = 0.001

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if isinstance(self.kind, SinusoidQuad) and any(f < 0 for f in self.kind.frequencies):
            raise ValueError("frequencies must be non-negative")
        if self.intrinsics is None:
            focal = TWO_PLANE_FOCAL if isinstance(self.kind, TwoPlane) else DEFAULT_FOCAL
            object.__setattr__(self, "intrinsics", default_intrinsics(self.width, self.height, focal))

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass
class GroundTruth:
    planes: List[Plane]
    mask: AssignmentMask  # flattened per-pixel plane id (0 = nothing hit)
    clean_depth: np.ndarray
    extras: dict = field(default_factory=dict)

    def label_image(self, shape) -> np.ndarray:
        return self.mask.labels.reshape(shape)


# --------------------------------------------------------------------------
# rendering


Face = Tuple[Plane, Callable[[np.ndarray], np.ndarray]]


def _render(faces: Sequence[Face], dirs: np.ndarray):
    """Nearest positive hit per pixel; returns (depth, face label)."""
    h, w, _ = dirs.shape
    depth = np.full((h, w), np.inf)
    label = np.zeros((h, w), dtype=np.int64)
    for j, (pl, inside) in enumerate(faces, start=1):
        ndq = dirs @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            z = -pl.dist / ndq
        pts = dirs * z[..., None]
        hit = np.isfinite(z) & (z > 0) & inside(pts)
        closer = hit & (z < depth)
        depth[closer] = z[closer]
        label[closer] = j
    depth[~np.isfinite(depth)] = 0.0
    return depth, label


def _plane_through(normal, point) -> Plane:
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    return Plane.from_coefficients(n, -float(n @ np.asarray(point, dtype=np.float64)))


def _everywhere(pts):
    return np.ones(pts.shape[:-1], dtype=bool)


def _camera_rotation(pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """Rows are the camera right / down / forward axes in world coordinates (y up)."""
    p, y = math.radians(pitch_deg), math.radians(yaw_deg)
    forward = np.array([math.sin(y) * math.cos(p), -math.sin(p), math.cos(y) * math.cos(p)])
    right = np.array([math.cos(y), 0.0, -math.sin(y)])
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def _staircase_faces(sc: Staircase):
    rot = _camera_rotation(STAIR_PITCH_DEG, STAIR_YAW_DEG)
    cam = np.array([0.0, STAIR_CAMERA_HEIGHT, 0.0])

    def to_world(pts):
        return pts @ rot + cam

    faces = []
    for i in range(sc.steps):
        z0 = sc.distance + i * sc.step_run
        y_lo = -np.inf if i == 0 else i * sc.step_rise
        y_hi = (i + 1) * sc.step_rise
        z_hi = z0 + (STAIR_TOP_RUN if i == sc.steps - 1 else sc.step_run)

        def riser(pts, y_lo=y_lo, y_hi=y_hi):
            w = to_world(pts)
            return (w[..., 1] >= y_lo) & (w[..., 1] <= y_hi)

        def tread(pts, z0=z0, z_hi=z_hi):
            w = to_world(pts)
            return (w[..., 2] >= z0) & (w[..., 2] <= z_hi)

        # world plane n.X + d = 0 -> camera plane (R n).p + (n.C + d) = 0
        for n_w, d_w, inside in ((np.array([0.0, 0.0, -1.0]), z0, riser),
                                 (np.array([0.0, 1.0, 0.0]), -y_hi, tread)):
            faces.append((Plane.from_coefficients(rot @ n_w, float(n_w @ cam + d_w)), inside))
    return faces


def _tetrahedron_faces(tt: Tetrahedron):
    z = tt.base_z
    verts = []
    for a in (90.0, 210.0, 330.0):
        r = math.radians(a)
        verts.append(np.array([tt.base_scale * math.cos(r), -tt.base_scale * math.sin(r) + 0.15, z]))
    apex = np.array([0.0, 0.15, z - tt.apex_height])
    faces = [(_plane_through([0.0, 0.0, -1.0], [0.0, 0.0, z]), _everywhere)]
    for i in range(3):
        b0, b1 = verts[i], verts[(i + 1) % 3]
        n = np.cross(b0 - apex, b1 - apex)
        pl = _plane_through(n, apex)
        tri = (apex, b0, b1)

        def inside(pts, tri=tri, n=n):
            signs = []
            for p, q in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                signs.append(np.cross(q - p, pts - p) @ n >= -1e-12)
            return signs[0] & signs[1] & signs[2]

        faces.append((pl, inside))
    return faces


def _strip_faces(width: int, intr: Intrinsics, n_strips: int):
    """Vertical strips, each its own plane at a distinct depth and tilt."""
    depths = [1.8, 2.1, 1.9, 2.2, 2.0, 1.7]
    # shallow tilts keep every extended strip plane well clear of its neighbours
    tilts = [(0.02, 0.01), (-0.02, 0.01), (0.02, -0.01), (-0.02, -0.01), (0.0, 0.01), (0.01, 0.0)]
    faces = []
    bounds = np.linspace(0, width, n_strips + 1)
    for i in range(n_strips):
        zc = depths[i % len(depths)]
        ax, ay = tilts[i % len(tilts)]
        # z = zc + ax * x + ay * y  ->  ax x + ay y - z + zc = 0
        pl = Plane.from_coefficients([ax, ay, -1.0], zc)
        lo, hi = bounds[i], bounds[i + 1]

        def inside(pts, lo=lo, hi=hi):
            with np.errstate(divide="ignore", invalid="ignore"):
                u = pts[..., 0] / pts[..., 2] * intr.fx + intr.cx
            return (u >= lo - 0.5) & (u < hi - 0.5)

        faces.append((pl, inside))
    return faces


def _two_plane_faces(tp: TwoPlane):
    """A concave corner: two half planes meeting on the optical-axis line x = 0."""
    tilt = math.radians((180.0 - tp.intersection_angle_deg) / 2.0)
    p = math.radians(TWO_PLANE_PITCH_DEG)
    y = math.radians(TWO_PLANE_YAW_DEG)
    # pitch about the camera x axis, then yaw about y; the crease stays in the x = 0 plane
    rx = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(p), -math.sin(p)], [0.0, math.sin(p), math.cos(p)]])
    ry = np.array([[math.cos(y), 0.0, math.sin(y)], [0.0, 1.0, 0.0], [-math.sin(y), 0.0, math.cos(y)]])
    rot = ry @ rx
    p0 = [0.0, 0.0, tp.distance]
    left = _plane_through(rot @ [math.sin(tilt), 0.0, -math.cos(tilt)], p0)
    right = _plane_through(rot @ [-math.sin(tilt), 0.0, -math.cos(tilt)], p0)
    return [(left, lambda pts: pts[..., 0] <= 0), (right, lambda pts: pts[..., 0] > 0)]


def _tjunction_parts(tj: TJunction, width: int, intr: Intrinsics):
    """Front patch on the left 45% of columns, far tilted plane on the rest.

    The far plane's depth is front_z at column ``b - strip_offset_px`` and
    grows by ``slope_per_px`` per column, so its visible part lies behind the
    patch edge while its extension crosses the patch.
    """
    b = int(round(0.45 * width))
    u0 = b - tj.strip_offset_px
    front = _plane_through([0.0, 0.0, -1.0], [0.0, 0.0, tj.front_z])
    # far plane: vertical, through the rays of columns u0 and b at the chosen depths
    z_u0 = tj.front_z
    z_b = tj.front_z + tj.slope_per_px * (b - u0)
    x_u0 = (u0 - intr.cx) / intr.fx * z_u0
    x_b = (b - intr.cx) / intr.fx * z_b
    tangent = np.array([x_b - x_u0, 0.0, z_b - z_u0])
    n = np.cross(tangent, [0.0, 1.0, 0.0])
    far = _plane_through(n, [x_u0, 0.0, z_u0])

    def col(pts):
        with np.errstate(divide="ignore", invalid="ignore"):
            return pts[..., 0] / pts[..., 2] * intr.fx + intr.cx

    faces = [(front, lambda pts: col(pts) < b - 0.5), (far, lambda pts: col(pts) >= b - 0.5)]
    return faces, front, far, b


# --------------------------------------------------------------------------


def corrupt_sinusoid(depth: np.ndarray, f: float, amplitude: float, width: Optional[int] = None,
                     columns: Optional[np.ndarray] = None) -> np.ndarray:
    """Add amplitude * sin(2 pi f u / width) to depth at pixel column u."""
    depth = np.asarray(depth, dtype=np.float64)
    if width is None:
        width = depth.shape[-1]
    u = np.arange(depth.shape[-1]) if columns is None else np.asarray(columns)
    return depth + amplitude * np.sin(2.0 * math.pi * f * u / width)


def generate(spec: SceneSpec):
    """Render ``spec``; returns ``(DepthImage, GroundTruth)``."""
    intr = spec.intrinsics
    dirs = pixel_directions(spec.shape, intr)
    kind = spec.kind
    extras = {}
    if isinstance(kind, Staircase):
        faces = _staircase_faces(kind)
    elif isinstance(kind, Tetrahedron):
        faces = _tetrahedron_faces(kind)
    elif isinstance(kind, SinusoidQuad):
        faces = _strip_faces(spec.width, intr, len(kind.frequencies))
    elif isinstance(kind, TwoPlane):
        faces = _two_plane_faces(kind)
    elif isinstance(kind, TJunction):
        faces, front, far, b = _tjunction_parts(kind, spec.width, intr)
    else:
        raise ValueError(f"unknown scene kind {kind!r}")

    clean, label = _render(faces, dirs)
    planes = [pl for pl, _ in faces]
    valid = clean > 0
    depth = clean.copy()

    if isinstance(kind, SinusoidQuad):
        for j, f in enumerate(kind.frequencies, start=1):
            wave = corrupt_sinusoid(np.zeros((1, spec.width)), f, kind.amplitude, spec.width)[0]
            sel = label == j
            depth[sel] += np.broadcast_to(wave, depth.shape)[sel]

    if isinstance(kind, TJunction):
        # front pixels within tolerance of the far plane's extension
        q = dirs[label == 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            z_far = -far.dist / (q @ far.normal)
        strip = np.zeros(spec.shape, dtype=bool)
        strip[label == 1] = np.abs(clean[label == 1] - z_far) < TJUNCTION_STRIP_TOL
        extras["strip"] = strip

    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        depth = depth + rng.normal(0.0, spec.noise_sigma, size=depth.shape)
    if spec.quant_step > 0:
        qspec = SensorSpec(spec.quant_step, intr)
        depth = quantize(np.maximum(depth, 0.0), qspec)
    depth = np.where(valid & (depth > 0), depth, 0.0)
    label = np.where(depth > 0, label, 0)

    gt = GroundTruth(planes, AssignmentMask(label.reshape(-1), len(planes)), clean, extras)
    return DepthImage(depth), gt


def scene_from_name(name: str, **params):
    """Build a scene kind from a CLI-style name: staircase, tetra, sinusoid, twoplane, tjunction."""
    name = name.lower()
    if name == "staircase":
        return Staircase(**params)
    if name in ("tetra", "tetrahedron"):
        return Tetrahedron(**params)
    if name == "sinusoid":
        if "frequencies" in params:
            params["frequencies"] = tuple(params["frequencies"])
        return SinusoidQuad(**params)
    if name == "twoplane":
        return TwoPlane(**params)
    if name == "tjunction":
        return TJunction(**params)
    raise ValueError(f"unknown scene {name!r}")
