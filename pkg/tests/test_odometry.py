import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semloc.core import PointCloud, Pose, UnifiedClass as U
from semloc.core.errors import ConfigError
from semloc.odometry import (AdaptiveThreshold, Odometry, OdometryConfig, VoxelHashMap, key_to_index, predict,
                             preprocess, register, voxel_keys)
from semloc.semantics import FilterSpec

CFG = OdometryConfig()


def vmap_of(cloud, cfg=CFG):
    m = VoxelHashMap(cfg.map_voxel, cfg.max_points_per_voxel)
    m.insert(cloud.points, cloud.labels)
    return m


def pose_error(a, b):
    d = a.inverse() @ b
    return np.linalg.norm(d.translation), math.degrees(d.angle())


# --- configuration -----------------------------------------------------------------------------

def test_config_defaults_and_validation():
    assert (CFG.voxel_downsample, CFG.map_voxel, CFG.max_points_per_voxel) == (0.5, 1.0, 20)
    assert (CFG.max_range, CFG.min_range, CFG.max_iterations, CFG.convergence_eps) == (100.0, 3.0, 50, 1e-4)
    assert (CFG.tau_min, CFG.tau_alpha) == (0.3, 1.0)
    with pytest.raises(ConfigError):
        OdometryConfig(semantic_gate="maybe")
    with pytest.raises(ConfigError):
        OdometryConfig(soft_weight=1.0)
    with pytest.raises(ConfigError):
        OdometryConfig(map_voxel=0)
    with pytest.raises(ConfigError):
        OdometryConfig.from_json({"voxel": 1})
    assert OdometryConfig.from_json(CFG.to_json()) == CFG


# --- voxel keys and map ------------------------------------------------------------------------

@settings(max_examples=50)
@given(st.lists(st.tuples(*[st.floats(-1e4, 1e4)] * 3), min_size=1, max_size=50), st.floats(0.05, 5.0))
def test_voxel_key_round_trip(pts, voxel):
    pts = np.array(pts)
    idx = key_to_index(voxel_keys(pts, voxel))
    assert np.array_equal(idx, np.floor(pts / voxel).astype(np.int64))


def test_map_caps_points_per_voxel_first_wins():
    m = VoxelHashMap(1.0, 3)
    pts = np.array([[0.1 * k, 0.5, 0.5] for k in range(6)])
    assert m.insert(pts) == 3
    assert np.array_equal(m.points, pts[:3])
    assert m.insert([[0.95, 0.5, 0.5], [1.5, 0.5, 0.5]]) == 1
    assert list(m.voxel_counts()) == [3, 1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_map_invariants_hold_after_inserts(seed):
    rng = np.random.default_rng(seed)
    m = VoxelHashMap(1.0, 5)
    for _ in range(3):
        m.insert(rng.uniform(-4, 4, (300, 3)), rng.integers(0, 20, 300))
    assert m.voxel_counts().max() <= 5
    assert np.array_equal(key_to_index(m.keys), np.floor(m.points / m.voxel).astype(np.int64))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_nearest_matches_brute_force(seed, radius):
    rng = np.random.default_rng(seed)
    m = VoxelHashMap(1.0, 20)
    m.insert(rng.uniform(-5, 5, (2000, 3)))
    q = rng.uniform(-6, 6, (300, 3))
    d, idx = m.nearest(q, radius)
    full = np.linalg.norm(q[:, None, :] - m.points[None, :, :], axis=2)
    best = full.min(axis=1)
    found = best <= radius
    assert np.array_equal(idx >= 0, found)
    assert np.allclose(d[found], best[found], rtol=0, atol=1e-12)
    assert np.all(np.isinf(d[~found]))


def test_nearest_searches_only_adjacent_voxels():
    m = VoxelHashMap(1.0, 20)
    m.insert([[2.5, 0.5, 0.5]])
    d, idx = m.nearest([[0.5, 0.5, 0.5]], 5.0)  # two voxels away
    assert idx[0] == -1 and np.isinf(d[0])
    d, idx = m.nearest([[1.5, 0.5, 0.5]], 5.0)
    assert idx[0] == 0 and d[0] == pytest.approx(1.0)


def test_eviction_by_voxel_center():
    m = VoxelHashMap(1.0, 20)
    m.insert([[0.5, 0.5, 0.5], [10.5, 0.5, 0.5], [3.2, 0.1, 0.9]])
    assert m.evict([0.0, 0.0, 0.0], 5.0) == 1
    assert len(m) == 2 and np.all(np.linalg.norm(m.points, axis=1) < 5)


# --- preprocess and predict --------------------------------------------------------------------

def test_preprocess_keeps_single_point_in_range():
    c = PointCloud([[50.0, 0.0, 0.0]], 0)
    out = preprocess(c, CFG)
    assert np.array_equal(out.points, c.points)


def test_preprocess_merges_points_in_one_voxel():
    c = PointCloud([[10.1, 0.1, 0.1], [10.2, 0.15, 0.1]], 0)
    out = preprocess(c, CFG)
    assert len(out) == 1 and np.array_equal(out.points[0], c.points[0])


def test_preprocess_crops_range():
    c = PointCloud([[1.0, 0, 0], [3.0, 0, 0], [100.0, 0, 0], [100.5, 0, 0]], 0)
    assert [p[0] for p in preprocess(c, CFG).points] == [3.0, 100.0]


def test_preprocess_count_equals_distinct_voxels():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-40, 40, (10_000, 3))
    r = np.linalg.norm(pts, axis=1)
    in_range = pts[(r >= CFG.min_range) & (r <= CFG.max_range)]
    oracle = {tuple(v) for v in np.floor(in_range / CFG.voxel_downsample).astype(int)}
    out = preprocess(PointCloud(pts, 0, labels=rng.integers(0, 20, 10_000)), CFG)
    assert len(out) == len(oracle)
    assert out.labels is not None


def test_predict():
    assert np.array_equal(predict([]).matrix(), np.eye(4))
    step = Pose.from_translation([1.0, 0, 0])
    assert predict([Pose.identity(), step]) is step


def test_adaptive_threshold():
    th = AdaptiveThreshold(CFG)
    assert th.value == CFG.initial_threshold
    th.update(Pose.from_translation([1.0, 0, 0]), Pose.from_translation([1.05, 0, 0]))
    assert th.value == CFG.tau_min  # 1 * 0.05 < 0.3
    th.update(Pose.from_translation([1.0, 0, 0]), Pose.from_translation([1.5, 0, 0]))
    assert th.value == pytest.approx(math.sqrt((0.05**2 + 0.5**2) / 2))


# --- registration ------------------------------------------------------------------------------

def test_register_perfect_alignment(scan_5k):
    res = register(scan_5k, vmap_of(scan_5k), Pose.identity(), CFG)
    assert np.abs(res.delta.matrix() - np.eye(4)).max() < 1e-9
    assert res.iterations <= CFG.max_iterations and not res.degenerate


def test_register_recovers_known_motion(scan_5k):
    M = Pose.from_rpy(0, 0, math.radians(5), [0.2, 0, 0])
    res = register(scan_5k.transformed(M), vmap_of(scan_5k), Pose.identity(), CFG)
    dt, da = pose_error(res.pose, M.inverse())
    assert dt < 1e-4 and da < 0.01
    h = np.array(res.cost_history)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))


def test_register_without_correspondences_is_degenerate(scan_5k):
    far = scan_5k.transformed(Pose.from_translation([500.0, 0, 0]))
    init = Pose.from_translation([1.0, 2.0, 0])
    res = register(far, vmap_of(scan_5k), init, CFG)
    assert res.degenerate and res.pose is init and res.correspondences == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_register_conjugation_equivariance(scan_5k, seed):
    rng = np.random.default_rng(seed)
    src = scan_5k.subset(np.arange(0, len(scan_5k), 5))
    M = Pose.from_rpy(0, 0, math.radians(2), [0.3, 0.1, 0])
    init = Pose.from_rpy(0, 0, math.radians(0.5), [0.05, 0, 0])
    G = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 20)
    a = register(src.transformed(M), vmap_of(scan_5k), init, CFG, tau=1.0)
    b = register(src.transformed(G @ M), vmap_of(scan_5k.transformed(G)), G @ init @ G.inverse(), CFG, tau=1.0)
    expect = G @ a.pose @ G.inverse()
    assert np.abs(expect.matrix() - b.pose.matrix()).max() < 1e-6


def _decoy_scene(scan, rng, frac=0.3):
    """Clean labeled scene plus car-labeled clutter that moves inconsistently between source and map."""
    n = int(frac * len(scan) / (1 - frac))
    base = scan.points[rng.choice(len(scan), n)] + rng.normal(0, 0.5, (n, 3))
    car = np.full(n, U.CAR, np.uint8)
    map_cloud = PointCloud(np.vstack([scan.points, base]), 0, labels=np.r_[scan.labels, car])
    moved = base + [0.8, 0.4, 0.0]  # clutter shifted as if driving away
    return map_cloud, moved, car


def test_hard_gate_ignores_decoys(scan_5k):
    rng = np.random.default_rng(3)
    map_cloud, decoy, car = _decoy_scene(scan_5k, rng)
    M = Pose.from_rpy(0, 0, math.radians(2), [0.3, 0, 0])
    src_clean = scan_5k.transformed(M)
    src = PointCloud(np.vstack([src_clean.points, M.transform_points(decoy)]), 0,
                     labels=np.r_[src_clean.labels, car])
    clean = register(src_clean, vmap_of(scan_5k), Pose.identity(), CFG, tau=1.0)
    hard_cfg = dataclasses.replace(CFG, semantic_gate="hard", gate_ignore=frozenset({U.CAR}))
    hard = register(src, vmap_of(map_cloud), Pose.identity(), hard_cfg, tau=1.0)
    off = register(src, vmap_of(map_cloud), Pose.identity(), CFG, tau=1.0)
    e_hard = pose_error(hard.pose, clean.pose)[0]
    e_off = pose_error(off.pose, clean.pose)[0]
    assert e_hard < 2e-3
    assert e_off > 10 * max(e_hard, 1e-4)
    assert hard.rejected_semantic > 0


def test_soft_gate_sits_between_hard_and_off(scan_5k):
    rng = np.random.default_rng(4)
    map_cloud, decoy, car = _decoy_scene(scan_5k, rng)
    M = Pose.from_translation([0.3, 0, 0])
    src = PointCloud(np.vstack([scan_5k.transformed(M).points, M.transform_points(decoy)]), 0,
                     labels=np.r_[scan_5k.labels, car])
    src = src.with_labels(np.where(src.labels == U.CAR, U.TRUCK, src.labels))  # decoys now disagree with the map
    errs = {}
    for gate in ("off", "soft", "hard"):
        cfg = dataclasses.replace(CFG, semantic_gate=gate)
        res = register(src, vmap_of(map_cloud), Pose.identity(), cfg, tau=1.0)
        errs[gate] = pose_error(res.pose, M.inverse())[0]
    assert errs["hard"] <= errs["soft"] <= errs["off"]


def test_gate_off_ignores_labels(scan_5k):
    M = Pose.from_translation([0.3, 0.1, 0])
    rng = np.random.default_rng(0)
    scrambled = scan_5k.with_labels(rng.integers(0, 20, len(scan_5k)).astype(np.uint8))
    a = register(scan_5k.transformed(M), vmap_of(scan_5k), Pose.identity(), CFG)
    b = register(scrambled.transformed(M).without_labels(), vmap_of(scan_5k.without_labels()), Pose.identity(), CFG)
    assert np.array_equal(a.pose.matrix(), b.pose.matrix())


# --- sequential odometry -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def drive(urban):
    """30 ground-truth frames of the urban block from a reduced sensor, vehicle frame."""
    from semloc.sim import default_rig, fast_lidar, raycast_lidar

    rig = default_rig()
    rng = np.random.default_rng(0)
    clouds, poses = [], []
    for k in range(30):
        t = 0.1 * k
        pose = urban.pose(t)
        scan = raycast_lidar(urban.world, pose @ rig.lidar_extrinsic, fast_lidar(), t, k, rng)
        clouds.append(scan.cloud.transformed(rig.lidar_extrinsic))
        poses.append(pose)
    return clouds, poses


def test_first_frame_bootstraps_map(drive):
    clouds, poses = drive
    odo = Odometry(initial_pose=poses[0])
    r = odo.process_frame(clouds[0])
    assert r.pose is poses[0] and r.registration is None and len(odo.map) > 0


def test_short_drive_keeps_map_invariants(drive):
    clouds, poses = drive
    odo = Odometry(initial_pose=poses[0])
    for c in clouds:
        odo.process_frame(c)
        assert odo.map.voxel_counts().max() <= CFG.max_points_per_voxel
    hist = np.array([p.translation for p in odo.poses])
    d = np.linalg.norm(odo.map.points[:, None, :] - hist[None, :, :], axis=2).min(axis=1)
    assert d.max() <= CFG.max_range + np.sqrt(3) * CFG.map_voxel
    errs = [pose_error(odo.poses[k - 1].inverse() @ odo.poses[k], poses[k - 1].inverse() @ poses[k])[0]
            for k in range(1, len(poses))]
    assert max(errs) < 0.1


def _urban_frame_errors(run, dataset):
    from semloc.dataset import Dataset

    est = run.odometry_trajectory.poses
    gt = Dataset(dataset).ground_truth().poses
    return np.array([pose_error(est[k - 1].inverse() @ est[k], gt[k - 1].inverse() @ gt[k])[0]
                     for k in range(1, len(gt))])


def test_static_world_relative_pose_error(urban_baseline, urban_dataset):
    """200 frames of the static urban block: per-frame relative translation error.

    The bulk of the frames sits near 1 cm; a tail of corner frames reaches 2 to 3 cm.
    """
    errs = _urban_frame_errors(urban_baseline, urban_dataset)
    assert len(errs) == 199
    assert np.median(errs) < 0.01
    assert np.quantile(errs, 0.9) < 0.02
    assert errs.max() < 0.05


@pytest.mark.xfail(strict=True, reason="point-to-point residuals leave a 2-3 cm tail on about 6% of frames")
def test_static_world_every_frame_below_2cm(urban_baseline, urban_dataset):
    assert _urban_frame_errors(urban_baseline, urban_dataset).max() < 0.02


def test_constant_velocity_prediction_is_exact_on_straight_drive():
    from semloc.sim.scenarios import LinePath

    path = LinePath(10.0, 0.3, (1.0, 2.0))
    deltas = [path.pose(0.1 * k).inverse() @ path.pose(0.1 * (k + 1)) for k in range(10)]
    for k in range(2, 10):
        err = pose_error(predict(deltas[:k]), deltas[k])[0]
        assert err < 1e-6


def test_semantics_disabled_matches_gate_off(drive):
    clouds, _ = drive
    a = Odometry(OdometryConfig(semantic_gate="off"))
    b = Odometry(OdometryConfig(semantics_enabled=False))
    for c in clouds[:10]:
        a.process_frame(c)
        b.process_frame(c.without_labels())
    for p, q in zip(a.poses, b.poses):
        assert np.array_equal(p.matrix(), q.matrix())


def test_map_filter_keeps_dropped_classes_out_of_map(drive):
    clouds, _ = drive
    odo = Odometry(OdometryConfig(semantic_gate="hard"), map_filter=FilterSpec({U.ROAD, U.BUILDING}))
    for c in clouds[:3]:
        odo.process_frame(c)
    assert not np.isin(odo.map.labels, [U.ROAD, U.BUILDING]).any()
