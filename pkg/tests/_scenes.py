"""Shared scene setup for the tests."""

import numpy as np

from infoplane.detector import AssignmentMask, DetectedPlane, DetectionResult, rank_planes
from infoplane.geometry import Plane
from infoplane.information import InfoContext, model_information
from infoplane.sensor import Constant, RayCloud, SensorSpec, resolve_range, unproject
from infoplane.synthetic import SceneSpec, generate

EPS = 0.01


def scene(kind, sigma_true=0.005, sigma_assumed=0.005, seed=0, **kw):
    """(cloud, gt, ctx, img) for a synthetic scene, ranged as max - min depth."""
    img, gt = generate(SceneSpec(kind, noise_sigma=sigma_true, seed=seed, **kw))
    spec = scene_sensor(kind, **kw)
    cloud = unproject(img, spec)
    ctx = InfoContext.from_range(resolve_range(img, spec), EPS, Constant(sigma_assumed))
    return cloud, gt, ctx, img


def scene_sensor(kind, **kw):
    """The sensor a synthetic scene was rendered with."""
    return SensorSpec(EPS, SceneSpec(kind, **kw).intrinsics)


def axial_cloud(points):
    """Cloud whose rays all point along +z, so ray and normal errors agree up to n_z."""
    pts = np.asarray(points, dtype=np.float64)
    rays = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    idx = np.stack([np.zeros(len(pts), int), np.arange(len(pts))], axis=1)
    return RayCloud(pts, rays, idx, (1, len(pts)))


def result_for(cloud, planes, labels, ctx):
    """Wrap given planes and labels as a ranked DetectionResult."""
    info = model_information(cloud, planes, labels, ctx)
    counts = np.bincount(labels, minlength=len(planes) + 1)
    dp = [DetectedPlane(p, int(counts[j + 1]), info.per_plane[j].reduction_nats) for j, p in enumerate(planes)]
    return rank_planes(DetectionResult(dp, AssignmentMask(labels, len(planes)), info, [info.total_nats]))


def fragment_scenario(seed):
    """1-3 noisy planar patches, each split into 1-3 jittered fragments, 10% outliers."""
    r = np.random.default_rng(seed)
    pts, planes, labels = [], [], []
    for t in range(int(r.integers(1, 4))):
        nrm = np.append(r.normal(size=2) * 0.2, -1.0)
        nrm /= np.linalg.norm(nrm)
        centre = np.array([3.0 * t, 0.0, r.uniform(1.5, 3.0)])
        d = -float(nrm @ centre)
        xy = r.uniform(-1, 1, (120, 2)) + centre[:2]
        z = -(d + xy @ nrm[:2]) / nrm[2] + r.normal(0, 0.003, 120)
        pts.append(np.column_stack([xy, z]))
        pieces = int(r.integers(1, 4))
        cut = np.sort(r.choice(np.arange(1, 120), pieces - 1, replace=False)) if pieces > 1 else []
        for part in np.split(np.arange(120), cut):
            planes.append(Plane.from_coefficients(nrm + r.normal(0, 0.002, 3), d + r.normal(0, 0.002)))
            labels.append(np.full(part.size, len(planes)))
    labels = np.concatenate(labels)
    labels[r.random(labels.size) < 0.1] = 0
    cloud = axial_cloud(np.vstack(pts))
    ctx = InfoContext(200.0, 0.01, Constant(0.005), "generic")
    return result_for(cloud, planes, labels, ctx), cloud, ctx
