
import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _scenes import axial_cloud, fragment_scenario, scene
from infoplane.detector import (
    AssignmentMask,
    DetectedPlane,
    DetectionResult,
    DetectorConfig,
    best_candidate,
    detect,
    merge_planes,
    rank_planes,
    refine_planes,
    sample_triples,
    trial_count,
)
from infoplane.geometry import Plane
from infoplane.information import (
    InfoContext,
    cloud_sigmas,
    is_inlier,
    mask_increment,
    model_information,
    phi_zero,
    plane_deltas,
    plane_param_cost,
    point_term,
)
from infoplane.sensor import Constant
from infoplane.synthetic import Staircase, Tetrahedron

CTX = InfoContext(100.0, 0.01, Constant(0.005))


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def grid_on_z(z, n=500, seed=0, spread=1.0):
    r = np.random.default_rng(seed)
    xy = r.uniform(-spread, spread, (n, 2))
    return np.column_stack([xy, np.full(n, z)])


def oracle_trials(c, r):
    mp.mp.dps = 50
    return int(mp.ceil(mp.log(1 - mp.mpf(c)) / mp.log(1 - mp.mpf(r) ** 3)))


def test_trial_count_examples():
    assert trial_count(0.99, 0.25) == 293 == oracle_trials("0.99", "0.25")
    assert trial_count(0.99, 0.1) == 4603 == oracle_trials("0.99", "0.1")
    assert trial_count(0.99, 1.0) == 1
    with pytest.raises(ValueError):
        trial_count(1.0, 0.5)
    with pytest.raises(ValueError):
        trial_count(0.5, 0.0)


@given(st.floats(0.05, 0.999), st.floats(0.05, 0.99))
def test_trial_count_is_ceiling(c, r):
    n = trial_count(c, r)
    # n trials reach confidence c, n - 1 do not
    assert 1 - (1 - r**3) ** n >= c - 1e-12
    if n > 1:
        assert 1 - (1 - r**3) ** (n - 1) < c + 1e-12


@given(st.integers(3, 50), st.integers(0, 2**32 - 1))
def test_sample_triples_distinct_in_range(m, seed):
    t = sample_triples(rng(seed), m, 200)
    assert t.min() >= 0 and t.max() < m
    assert np.all(t[:, 0] != t[:, 1]) and np.all(t[:, 0] != t[:, 2]) and np.all(t[:, 1] != t[:, 2])
    assert np.array_equal(t, sample_triples(rng(seed), m, 200))


def test_sample_triples_uniform():
    t = sample_triples(rng(1), 5, 60000)
    counts = np.bincount(np.sort(t, axis=1) @ np.array([25, 5, 1]), minlength=125)
    counts = counts[counts > 0]
    assert counts.size == 10  # all 5 choose 3 subsets appear
    assert counts.min() > 0.9 * 6000 and counts.max() < 1.1 * 6000
    with pytest.raises(ValueError):
        sample_triples(rng(), 2, 1)


def test_config_validation():
    for bad in ({"confidence_c": 1.0}, {"inlier_ratio_r": 0.0}, {"max_planes_N": 0},
                {"min_inliers": 2}, {"early_stop_patience": 0}, {"max_refit_iters": -1}):
        with pytest.raises(ValueError):
            DetectorConfig(**bad)
    assert DetectorConfig().n_trials == 293
    assert DetectorConfig(trials=7).n_trials == 7


def test_best_candidate_exact_plane():
    cloud = axial_cloud(grid_on_z(2.0))
    cand = best_candidate(cloud, np.arange(500), CTX, DetectorConfig(), rng())
    np.testing.assert_allclose(cand.plane.normal, [0, 0, -1], atol=1e-9)
    assert cand.plane.dist == pytest.approx(2.0)
    assert cand.inliers.size == 500
    assert cand.reduction_nats == pytest.approx(500 * point_term(0.0, 0.005, CTX), rel=1e-9)


def test_best_candidate_none_on_uniform_noise():
    # expected inlier fraction times |term| stays far below the plane cost
    bound = 2 * 0.0148 / 2.0
    assert bound * 200 * abs(point_term(0.0, 0.005, CTX)) < plane_param_cost(CTX) * 10
    hits = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        pts = r.uniform(0, 2.0, (200, 3))
        cloud = axial_cloud(pts)
        ctx = InfoContext.from_range(2.0, 0.01, Constant(0.0005))
        cfg = DetectorConfig(min_inliers=10, seed=seed)
        hits += best_candidate(cloud, np.arange(200), ctx, cfg, rng(seed)) is not None
    assert hits == 0


def test_best_candidate_two_equal_planes():
    a = grid_on_z(2.0, 300, seed=1)
    b = grid_on_z(3.0, 300, seed=2)
    cloud = axial_cloud(np.vstack([a, b]))
    cfg = DetectorConfig()
    cand = best_candidate(cloud, np.arange(600), CTX, cfg, rng(4))
    # oracle: each plane alone
    best_each = [best_candidate(cloud, np.arange(300) + off, CTX, cfg, rng(4)).reduction_nats for off in (0, 300)]
    assert abs(cand.reduction_nats - min(best_each)) <= 0.01 * abs(min(best_each))
    assert cand.plane.dist in (pytest.approx(2.0), pytest.approx(3.0))


def test_best_candidate_too_few_points():
    cloud = axial_cloud(grid_on_z(2.0, 10))
    assert best_candidate(cloud, np.array([0, 1]), CTX, DetectorConfig(), rng()) is None


def test_detect_noiseless_staircase_finds_four():
    cloud, gt, ctx, _ = scene(Staircase(), sigma_true=0.0)
    res = detect(cloud, ctx, DetectorConfig(seed=0))
    assert res.plane_count == 4


def test_detect_uniform_noise_gives_empty_model():
    r = np.random.default_rng(5)
    cloud = axial_cloud(r.uniform(0, 2.0, (300, 3)))
    ctx = InfoContext.from_range(2.0, 0.01, Constant(0.0005))
    res = detect(cloud, ctx, DetectorConfig(min_inliers=10))
    assert res.plane_count == 0
    assert res.info.total_nats == pytest.approx(phi_zero(300, ctx))
    assert np.all(res.mask.labels == 0)


def test_detect_staircase_noise_levels():
    cloud, _, ctx, _ = scene(Staircase(), seed=3)
    assert detect(cloud, ctx, DetectorConfig(seed=3)).plane_count == 4
    cloud, _, ctx, _ = scene(Staircase(), sigma_assumed=0.002, seed=3)
    assert detect(cloud, ctx, DetectorConfig(seed=3)).plane_count >= 4


@pytest.fixture(scope="module")
def tetra_result():
    cloud, gt, ctx, _ = scene(Tetrahedron(), seed=2)
    return cloud, ctx, detect(cloud, ctx, DetectorConfig(seed=2))


def test_phi_trace_steps(tetra_result):
    cloud, ctx, res = tetra_result
    k = len(cloud)
    tr = res.phi_trace
    assert tr[0] == phi_zero(k, ctx)
    for n, step in enumerate(res.audit["steps"], start=1):
        expect = mask_increment(k, n) + plane_param_cost(ctx) + step["reduction"]
        assert tr[n] - tr[n - 1] == pytest.approx(expect, rel=1e-9)
    assert res.info.total_nats == pytest.approx(min(tr), rel=1e-9)


def test_result_invariants(tetra_result):
    cloud, ctx, res = tetra_result
    planes = [p.plane for p in res.planes]
    again = model_information(cloud, planes, res.mask.labels, ctx)
    assert again.total_nats == pytest.approx(res.info.total_nats, rel=1e-9)
    red = [p.reduction_nats for p in res.planes]
    assert red == sorted(red)
    assert [p.rank for p in res.planes] == list(range(1, len(planes) + 1))
    hist = res.mask.histogram()
    assert hist.sum() == len(cloud)
    sig = cloud_sigmas(cloud, ctx)
    for j, p in enumerate(res.planes, start=1):
        idx = np.flatnonzero(res.mask.labels == j)
        assert idx.size == p.inlier_count
        assert np.all(is_inlier(plane_deltas(cloud, p.plane, ctx, idx), sig[idx], ctx))


def test_determinism(tetra_result):
    cloud, ctx, res = tetra_result
    again = detect(cloud, ctx, DetectorConfig(seed=2))
    assert np.array_equal(again.mask.labels, res.mask.labels)
    assert [p.plane for p in again.planes] == [p.plane for p in res.planes]
    assert again.phi_trace == res.phi_trace


def _result(cloud, planes, labels, ctx):
    info = model_information(cloud, planes, labels, ctx)
    counts = np.bincount(labels, minlength=len(planes) + 1)
    dp = [DetectedPlane(p, int(counts[j + 1]), info.per_plane[j].reduction_nats) for j, p in enumerate(planes)]
    return rank_planes(DetectionResult(dp, AssignmentMask(labels, len(planes)), info, [info.total_nats]))


def test_merge_identical_fragments():
    pts = grid_on_z(2.0, 400)
    cloud = axial_cloud(pts)
    z2 = Plane(np.array([0, 0, -1.0]), 2.0)
    labels = np.where(pts[:, 0] < 0, 1, 2)
    res = _result(cloud, [z2, z2], labels, CTX)
    merged = merge_planes(res, cloud, CTX)
    assert merged.plane_count == 1
    assert merged.info.total_nats < res.info.total_nats
    assert merged.planes[0].inlier_count == 400


def test_merge_leaves_orthogonal_planes():
    a = grid_on_z(2.0, 200, seed=1)
    r = np.random.default_rng(2)
    b = np.column_stack([np.full(200, 1.5), r.uniform(-1, 1, 200), r.uniform(2.1, 3, 200)])
    pts = np.vstack([a, b])
    cloud = axial_cloud(pts)
    ctx = InfoContext(100.0, 0.01, Constant(0.005), "generic")
    planes = [Plane(np.array([0, 0, -1.0]), 2.0), Plane(np.array([-1.0, 0, 0]), 1.5)]
    labels = np.repeat([1, 2], 200)
    res = _result(cloud, planes, labels, ctx)
    merged = merge_planes(res, cloud, ctx, refine_iters=0)
    assert merged.plane_count == 2


def test_merge_coplanar_patches_with_offset():
    a = grid_on_z(2.0, 200, seed=1) + [2, 0, 0]
    b = grid_on_z(2.004, 200, seed=2) - [2, 0, 0]
    cloud = axial_cloud(np.vstack([a, b]))
    planes = [Plane(np.array([0, 0, -1.0]), 2.0), Plane(np.array([0, 0, -1.0]), 2.004)]
    labels = np.repeat([1, 2], 200)
    res = _result(cloud, planes, labels, CTX)
    # cross terms are negative, so the pair qualifies
    t = point_term(0.004, 0.005, CTX) * 200
    assert t < 0
    merged = merge_planes(res, cloud, CTX, refine_iters=0)
    assert merged.plane_count == 1
    assert merged.info.total_nats < res.info.total_nats


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merge_and_refine_never_increase_phi(seed):
    res, cloud, ctx = fragment_scenario(seed)
    merged = merge_planes(res, cloud, ctx)
    assert merged.info.total_nats <= res.info.total_nats + 1e-9 * abs(res.info.total_nats)
    again = model_information(cloud, [p.plane for p in merged.planes], merged.mask.labels, ctx)
    assert again.total_nats == pytest.approx(merged.info.total_nats, rel=1e-9)
    planes = [p.plane for p in res.planes]
    ref_planes, ref_labels, origins = refine_planes(cloud, planes, res.mask.labels, ctx, cloud_sigmas(cloud, ctx))
    ref = model_information(cloud, ref_planes, ref_labels, ctx).total_nats
    assert ref <= res.info.total_nats + 1e-9 * abs(res.info.total_nats)
    assert len(origins) == len(ref_planes)


def test_refine_zero_iterations_is_identity():
    pts = grid_on_z(2.0, 50)
    cloud = axial_cloud(pts)
    z2 = Plane(np.array([0, 0, -1.0]), 2.0)
    labels = np.ones(50, int)
    out = refine_planes(cloud, [z2], labels, CTX, cloud_sigmas(cloud, CTX), iters=0)
    assert out[0] == [z2] and np.array_equal(out[1], labels) and out[2] == [0]


def test_rank_stable_on_ties_and_single():
    cloud = axial_cloud(grid_on_z(2.0, 4))
    p = Plane(np.array([0, 0, -1.0]), 2.0)
    q = Plane(np.array([0, 0, -1.0]), 2.5)
    info = model_information(cloud, [p, q], np.array([1, 1, 2, 2]), CTX)
    res = DetectionResult([DetectedPlane(p, 2, -5.0), DetectedPlane(q, 2, -5.0)],
                          AssignmentMask(np.array([1, 1, 2, 2]), 2), info, [0.0])
    ranked = rank_planes(res)
    assert [x.plane for x in ranked.planes] == [p, q]
    assert np.array_equal(ranked.mask.labels, [1, 1, 2, 2])
    res2 = replace_reductions(res, [-1.0, -9.0])
    ranked = rank_planes(res2)
    assert [x.plane for x in ranked.planes] == [q, p]
    assert np.array_equal(ranked.mask.labels, [2, 2, 1, 1])
    single = rank_planes(DetectionResult([DetectedPlane(p, 4, -3.0)], AssignmentMask(np.ones(4, int), 1), info, [0.0]))
    assert single.planes[0].rank == 1


def replace_reductions(res, reds):
    from dataclasses import replace
    return replace(res, planes=[replace(p, reduction_nats=r) for p, r in zip(res.planes, reds)])


def test_mask_rejects_bad_labels():
    with pytest.raises(ValueError):
        AssignmentMask(np.array([0, 3]), 2)
