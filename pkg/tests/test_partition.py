import numpy as np
import pytest

from _scenes import scene
from infoplane.detector import DetectorConfig, detect
from infoplane.fileio import write_image16
from infoplane.partition import (
    LEFTOVER_OVERRIDES,
    PartitionSet,
    densify,
    detect_partitioned,
    grid_partition,
    load_label_map,
)
from infoplane.synthetic import Staircase, TwoPlane


def test_all_zero_map_is_leftover_only():
    ps = densify(np.zeros((4, 5), int))
    assert ps.region_count == 0 and np.all(ps.label_map == 0)


def test_densify_relabels():
    ps = densify(np.array([[0, 5], [9, 5]]))
    assert ps.region_count == 2
    assert ps.label_map.tolist() == [[0, 1], [2, 1]]
    with pytest.raises(ValueError):
        densify(np.array([[-1]]))


def test_partition_set_validation():
    with pytest.raises(ValueError):
        PartitionSet(np.array([[0, 2]]), 1)
    with pytest.raises(ValueError):
        PartitionSet(np.array([[1]]), 1, overrides={1: {"seed": 3}})


def test_grid_examples():
    one = grid_partition((7, 9), 1, 1)
    assert one.region_count == 1 and np.all(one.label_map == 1)
    four = grid_partition((480, 640), 2, 2)
    assert four.region_count == 4
    assert np.all(np.bincount(four.label_map.ravel())[1:] == 320 * 240)
    assert np.all(four.label_map[:240, :320] == 1)
    nine = grid_partition((100, 100), 3, 3)
    counts = np.bincount(nine.label_map.ravel())[1:]
    assert counts.sum() == 100 * 100 and nine.region_count == 9
    sides = sorted({int(np.sqrt(c)) for c in counts if int(np.sqrt(c)) ** 2 == c})
    assert sides == [33, 34]
    assert sorted(set(counts.tolist())) == [33 * 33, 33 * 34, 34 * 34]
    with pytest.raises(ValueError):
        grid_partition((4, 4), 0, 1)


def test_load_label_map(tmp_path):
    p = tmp_path / "seg.pgm"
    write_image16(p, np.array([[0, 5], [9, 5]], dtype=np.uint16))
    ps = load_label_map(p, (2, 2))
    assert ps.region_count == 2
    with pytest.raises(ValueError):
        load_label_map(p, (3, 2))


def test_region_config_overrides():
    ps = PartitionSet(np.array([[1, 2]]), 2, overrides={2: {"max_planes_N": 2}},
                      region_defaults={"inlier_ratio_r": 0.2})
    cfg = DetectorConfig()
    assert ps.region_config(1, cfg).inlier_ratio_r == 0.2
    assert ps.region_config(2, cfg).max_planes_N == 2
    left = ps.region_config(0, cfg)
    assert left.max_planes_N == LEFTOVER_OVERRIDES["max_planes_N"]
    assert left.inlier_ratio_r == LEFTOVER_OVERRIDES["inlier_ratio_r"]
    assert densify(np.zeros((1, 2))).region_config(0, cfg) == cfg


def test_leftover_only_equals_plain_detect():
    cloud, _, ctx, img = scene(TwoPlane(), seed=1)
    cfg = DetectorConfig(seed=1)
    a = detect(cloud, ctx, cfg)
    b = detect_partitioned(cloud, densify(np.zeros(img.depth.shape, int)), ctx, cfg)
    assert np.array_equal(a.mask.labels, b.mask.labels)
    assert [p.plane for p in a.planes] == [p.plane for p in b.planes]
    c = detect_partitioned(cloud, grid_partition(img, 1, 1), ctx, cfg)
    assert np.array_equal(a.mask.labels, c.mask.labels) and a.phi_trace == c.phi_trace


def test_region_restricts_support():
    cloud, gt, ctx, img = scene(Staircase(), seed=0)
    lab = gt.label_image(img.depth.shape)
    region = (lab == 1).astype(int)  # one face as region 1, everything else leftover
    ps = densify(region)
    res = detect_partitioned(cloud, ps, ctx, DetectorConfig(seed=0), refine_iters=0)
    reg_of_point = ps.label_map[cloud.pixel_index[:, 0], cloud.pixel_index[:, 1]]
    origin = {p.region for p in res.planes}
    assert 1 in origin
    for j, p in enumerate(res.planes, start=1):
        if p.region == 1 and not res.audit["merges"]:
            assert np.all(reg_of_point[res.mask.labels == j] == 1)


def test_partitioned_regions_disjoint_cover():
    cloud, _, ctx, img = scene(Staircase(), seed=0)
    ps = grid_partition(img, 2, 3)
    reg = ps.label_map[cloud.pixel_index[:, 0], cloud.pixel_index[:, 1]]
    assert np.all(reg >= 1)
    sizes = [np.count_nonzero(reg == r) for r in range(1, 7)]
    assert sum(sizes) == len(cloud)


def test_grid_split_staircase_merges_to_four():
    cloud, _, ctx, img = scene(Staircase(), seed=4)
    res = detect_partitioned(cloud, grid_partition(img, 1, 2), ctx, DetectorConfig(seed=4))
    assert res.plane_count == 4
    assert res.audit["merges"]
    assert len(res.phi_trace) == 2
    assert res.audit["refine"]["phi_after"] <= res.audit["refine"]["phi_before"]
    assert res.info.check()
