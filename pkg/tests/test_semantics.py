import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semloc.core import GROUPS, NUM_CLASSES, PointCloud, Pose, UnifiedClass as U, semantickitti_table
from semloc.core.errors import ConfigError, DataError, UnknownClassError
from semloc.semantics import (
    FilterSpec,
    LabelSource,
    apply_filter,
    load_point_labels,
    write_label_file,
)
from semloc.sim import LidarModel, raycast_lidar
from semloc.sim.scenarios import flat_world

KITTI = semantickitti_table()


def cloud_of(labels, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(len(labels), 3)), 7, None, np.asarray(labels, np.uint8))


def test_all_building_file(tmp_path):
    p = tmp_path / "a.label"
    write_label_file(p, [KITTI.source_id("building")] * 12)
    out = load_point_labels(p, cloud_of([0] * 12).without_labels(), KITTI)
    assert np.all(out.labels == U.BUILDING)


def test_moving_car_ids_become_car(tmp_path):
    p = tmp_path / "a.label"
    write_label_file(p, [KITTI.source_id("moving-car"), KITTI.source_id("car")])
    out = load_point_labels(p, cloud_of([0, 0]).without_labels(), KITTI)
    assert list(out.labels) == [U.CAR, U.CAR]


def test_label_count_mismatch_names_both_counts(tmp_path):
    p = tmp_path / "a.label"
    write_label_file(p, [KITTI.source_id("road")] * 4)
    with pytest.raises(DataError, match="4 labels for 5 points"):
        load_point_labels(p, cloud_of([0] * 5), KITTI)


def test_unknown_label_id(tmp_path):
    p = tmp_path / "a.label"
    write_label_file(p, [9999])
    with pytest.raises(UnknownClassError):
        load_point_labels(p, cloud_of([0]), KITTI)


def test_label_source_kinds():
    assert LabelSource("per-point-file").kind == "per-point-file"
    with pytest.raises(ConfigError):
        LabelSource("network")


def test_drop_car_keeps_road():
    c = cloud_of([U.CAR] * 10 + [U.ROAD] * 5)
    out = apply_filter(c, FilterSpec({U.CAR}))
    assert len(out) == 5 and np.all(out.labels == U.ROAD)


def test_empty_drop_set_is_identity():
    c = cloud_of([U.CAR, U.ROAD, 0])
    assert apply_filter(c, FilterSpec()) is c


def test_unlabeled_points_follow_keep_flag():
    c = cloud_of([0, U.ROAD, 0])
    assert len(apply_filter(c, FilterSpec(keep_unlabeled=False))) == 1
    assert len(apply_filter(c.without_labels(), FilterSpec({U.CAR}))) == 3


def test_filter_from_group_names():
    spec = FilterSpec.from_names(["ground", "pole"])
    assert spec.drop_classes == GROUPS["ground"] | {U.POLE}
    assert spec.to_json()["drop"] == sorted(c.label for c in spec.drop_classes)


label_lists = st.lists(st.integers(0, NUM_CLASSES - 1), max_size=60)
drop_sets = st.sets(st.integers(1, NUM_CLASSES - 1), max_size=6)


@settings(max_examples=60, deadline=None)
@given(label_lists, drop_sets, st.booleans())
def test_filter_partition_idempotence_and_order(labels, drop, keep_unlabeled):
    c = cloud_of(labels)
    spec = FilterSpec(drop, keep_unlabeled)
    kept = apply_filter(c, spec)
    mask = spec.keep_mask(c.labels)
    dropped = c.subset(~mask)
    assert len(kept) + len(dropped) == len(c)
    assert not set(dropped.labels.tolist()) & set(kept.labels.tolist())
    np.testing.assert_array_equal(kept.points, c.points[mask])  # order preserved
    again = apply_filter(kept, spec)
    np.testing.assert_array_equal(again.points, kept.points)


@settings(max_examples=30, deadline=None)
@given(label_lists, drop_sets, st.integers(0, 10_000))
def test_filter_commutes_with_rigid_transform(labels, drop, seed):
    rng = np.random.default_rng(seed)
    T = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    c, spec = cloud_of(labels, seed), FilterSpec(drop)
    a = apply_filter(c.transformed(T), spec)
    b = apply_filter(c, spec).transformed(T)
    np.testing.assert_allclose(a.points, b.points, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_dropping_ground_on_flat_world_clears_the_plane():
    s = flat_world(0)
    pose = s.pose(0.0) @ Pose.from_translation([0, 0, 1.9])
    scan = raycast_lidar(s.world, pose, LidarModel(rows=32, cols=512), 0.0)
    world_pts = pose.transform_points(scan.cloud.points)
    on_plane = np.abs(world_pts[:, 2]) < 0.05  # every object clears the ground by 0.2 m
    assert on_plane.sum() > 1000
    kept = apply_filter(scan.cloud, FilterSpec.from_names(["ground"]))
    assert len(kept) > 0
    assert np.abs(pose.transform_points(kept.points)[:, 2]).min() >= 0.05
