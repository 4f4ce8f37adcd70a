import filecmp
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semloc.core import CameraModel, Pose, UnifiedClass as U
from semloc.core.errors import ConfigError
from semloc.gnss import read_gnss_csv
from semloc.sim import (
    VEHICLE_TO_OPTICAL,
    Box,
    Cylinder,
    GroundRegion,
    LidarModel,
    RigSpec,
    World,
    default_rig,
    fast_lidar,
    generate_dataset,
    make_scenario,
    raycast,
    raycast_bruteforce,
    raycast_lidar,
    render_label_image,
    vehicle_pose_at,
)
from semloc.sim.dataset import corrupt_labels
from semloc.sim.scenarios import BodyMotion, CurvePath

TINY = fast_lidar(rows=8, cols=128, range_noise=0.0)


def busy_world(rng, moving=True):
    w = World(ground_class=U.TERRAIN)
    w.add(GroundRegion(-10, -3, 10, 3, U.ROAD))
    for _ in range(25):
        lo = rng.uniform(-30, 30, 3) * [1, 1, 0]
        hi = lo + rng.uniform(0.5, 6, 3)
        v = tuple(rng.normal(size=3) * [3, 3, 0]) if moving and rng.random() < 0.3 else (0.0, 0.0, 0.0)
        w.add(Box(tuple(lo), tuple(hi), U.BUILDING, v))
    for _ in range(15):
        c = rng.uniform(-30, 30, 2)
        w.add(Cylinder(tuple(c), rng.uniform(0.1, 1.0), 0.0, rng.uniform(1, 8), U.POLE))
    return w


def test_raycast_matches_brute_force_on_10k_rays():
    rng = np.random.default_rng(0)
    w = busy_world(rng)
    dirs = rng.normal(size=(10_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = rng.uniform(-5, 5, (10_000, 3)) * [1, 1, 0.4] + [0, 0, 2.5]
    times = rng.uniform(0, 2, 10_000)
    got = raycast(w, origins, dirs, times)
    want = raycast_bruteforce(w, origins, dirs, times)
    for a, b in zip(got, want):
        np.testing.assert_array_equal(a, b)
    assert np.isfinite(got[0]).mean() > 0.5


def test_culling_with_shared_origin_matches_brute_force():
    rng = np.random.default_rng(1)
    w = busy_world(rng)
    dirs = rng.normal(size=(10_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    o = np.array([1.0, -2.0, 1.8])
    got = raycast(w, o, dirs, 0.7, 25.0)
    want = raycast_bruteforce(w, o, dirs, 0.7, 25.0)
    for a, b in zip(got, want):
        np.testing.assert_array_equal(a, b)


def test_empty_world_returns_empty_cloud():
    scan = raycast_lidar(World(ground=False), Pose.identity(), TINY, 0.0)
    assert len(scan.cloud) == 0


def test_ground_return_at_minus_30_degrees():
    model = LidarModel(rows=1, cols=8, vfov_deg=10.0, elevation_center_deg=-30.0)
    scan = raycast_lidar(World(ground_class=U.ROAD), Pose.from_translation([0, 0, 2.0]), model, 0.0)
    assert len(scan.cloud) == 8
    np.testing.assert_allclose(scan.ranges, 4.0, rtol=0, atol=1e-12)
    assert np.all(scan.cloud.labels == U.ROAD)


def test_box_face_return():
    w = World(ground=False).add(Box((9.5, -0.5, -0.5), (10.5, 0.5, 0.5), U.CAR))
    model = LidarModel(rows=1, cols=4, vfov_deg=10.0)
    scan = raycast_lidar(w, Pose.identity(), model, 0.0)
    assert len(scan.cloud) == 1
    assert scan.ranges[0] == pytest.approx(9.5, abs=1e-12)
    assert scan.cloud.labels[0] == U.CAR


def test_moving_box_evaluated_at_ray_time():
    w = World(ground=False).add(Box((9.5, -0.5, -0.5), (10.5, 0.5, 0.5), U.CAR, (2.0, 0.0, 0.0)))
    t, cls, _ = raycast(w, [0, 0, 0], [[1.0, 0, 0]], [0.5])
    assert t[0] == pytest.approx(10.5) and cls[0] == U.CAR


def test_motion_ramp_time_warp():
    w = World(motion_ramp_s=2.0)
    tt = np.linspace(0, 6, 601)
    m = w.motion_time(tt)
    assert m[0] == 0 and np.all(np.diff(m) >= 0)
    np.testing.assert_allclose(m[tt >= 2.0], tt[tt >= 2.0] - 1.0, atol=1e-12)
    # speed factor dm/dt rises smoothly from 0 to 1
    v = np.gradient(m, tt)
    assert v[0] < 1e-3 and abs(v[-1] - 1) < 1e-9
    np.testing.assert_array_equal(World().motion_time(tt), tt)


def test_cylinder_hit_and_cap():
    w = World(ground=False).add(Cylinder((5.0, 0.0), 1.0, 0.0, 2.0, U.TRUNK))
    t, cls, _ = raycast(w, [[0, 0, 1.0], [5.0, 0, 5.0]], [[1.0, 0, 0], [0, 0, -1.0]])
    np.testing.assert_allclose(t, [4.0, 3.0])
    assert list(cls) == [U.TRUNK, U.TRUNK]


def horizon_camera(pitch_deg, h=1.5):
    cam = CameraModel.from_fov("c", 64, 48, 70.0)
    pose = Pose.from_rpy(0, math.radians(pitch_deg), 0, (0, 0, h)) @ VEHICLE_TO_OPTICAL.inverse()
    return cam, pose


@pytest.mark.parametrize("pitch", [0.0, 8.0, -5.0])
def test_horizon_row_splits_ground_and_sky(pitch):
    cam, pose = horizon_camera(pitch)
    img = render_label_image(World(ground_class=U.ROAD), pose, cam, max_range=1e9).classes
    v_h = cam.cy - cam.fy * math.tan(math.radians(pitch))  # pixel row of the horizon, up in y is negative
    rows = np.arange(cam.height)
    below, above = rows > v_h + 0.5, rows < v_h - 0.5
    assert below.any()
    assert np.all(img[below] == U.ROAD)
    assert np.all(img[above] == 0)


def test_empty_world_image_all_unlabeled():
    cam, pose = horizon_camera(10.0)
    assert not render_label_image(World(ground=False), pose, cam).classes.any()


def test_lidar_model_validation():
    with pytest.raises(ConfigError):
        LidarModel(rows=0)
    with pytest.raises(ConfigError):
        LidarModel(vfov_deg=180.0)
    cams = default_rig().cameras
    with pytest.raises(ConfigError):
        RigSpec(cameras=(cams[0], cams[0]))


def test_default_rig_layout():
    rig = default_rig()
    assert rig.lidar.rows == 128 and rig.lidar.cols == 2048 and rig.lidar.vfov_deg == 45.0
    assert [c.priority for c in rig.cameras] == list(range(8))


def test_corrupt_labels_flip_to_other_class():
    rng = np.random.default_rng(0)
    lab = rng.integers(0, 20, 50_000)
    out = corrupt_labels(lab, 0.25, rng)
    flipped = out != lab
    assert abs(flipped.mean() - 0.25) < 0.01
    assert np.all(corrupt_labels(lab, 0.0, rng) == lab)


@pytest.fixture(scope="module")
def small_rig():
    return default_rig(TINY, camera_width=32, camera_height=24)


def test_generation_is_byte_identical(tmp_path, small_rig):
    a = generate_dataset("urban-block", small_rig, 3, tmp_path / "a", frames=4, label_error_rate=0.1)
    generate_dataset("urban-block", small_rig, 3, tmp_path / "b", frames=4, label_error_rate=0.1)
    files = sorted(p.relative_to(a.root) for p in a.root.rglob("*") if p.is_file())
    assert any(p.suffix == ".png" for p in files) and any(p.suffix == ".label" for p in files)
    match, mismatch, errors = filecmp.cmpfiles(a.root, tmp_path / "b", [str(p) for p in files], shallow=False)
    assert not mismatch and not errors and len(match) == len(files)


def test_different_seed_changes_dataset(tmp_path, small_rig):
    a = generate_dataset("straight-road", small_rig, 0, tmp_path / "a", frames=2, cameras=False)
    b = generate_dataset("straight-road", small_rig, 1, tmp_path / "b", frames=2, cameras=False)
    assert (a.root / "gnss.csv").read_bytes() != (b.root / "gnss.csv").read_bytes()


def test_noiseless_gnss_equals_ground_truth(tmp_path, small_rig):
    g = generate_dataset("dynamic-traffic", small_rig, 0, tmp_path, frames=25, cameras=False, gnss_noise=False)
    fixes = read_gnss_csv(tmp_path / "gnss.csv")
    assert len(fixes) == 3  # 1 Hz over 2.5 s at 10 Hz
    gt = dict(zip(g.ground_truth.stamps, g.ground_truth.poses))
    for f in fixes:
        np.testing.assert_array_equal(np.array(f.position), gt[f.stamp].translation)
        np.testing.assert_array_equal(gt[f.stamp].translation, vehicle_pose_at(g.scenario, f.stamp).translation)


def test_label_files_mark_movers(tmp_path, small_rig):
    g = generate_dataset("dynamic-traffic", small_rig, 0, tmp_path, frames=3, cameras=False)
    ids = np.concatenate([np.fromfile(tmp_path / "labels" / f"{s}.label", "<u4") for s in g.lidar_stamps])
    assert (ids >= 252).any() and (ids < 252).any()


def test_unknown_scenario():
    with pytest.raises(ConfigError, match="urban-block"):
        make_scenario("moon")


@pytest.mark.parametrize("name", ["urban-block", "straight-road", "dynamic-traffic"])
def test_scenarios_are_seeded(name):
    a, b = make_scenario(name, 4), make_scenario(name, 4)
    assert a.world.boxes == b.world.boxes and a.world.cylinders == b.world.cylinders
    np.testing.assert_array_equal(a.pose(3.3).matrix(), b.pose(3.3).matrix())


def test_urban_block_closes_its_loop():
    s = make_scenario("urban-block")
    assert s.loop
    end = s.pose(s.duration).translation
    start = s.pose(0.0).translation
    assert np.linalg.norm((end - start)[:2]) < 1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 6.0), st.floats(0.0, 30.0))
def test_ramped_path_distance_is_continuous_and_monotone(ramp, t):
    p = CurvePath(500.0, lambda s: 0.0, 10.0, ramp_s=ramp)
    d0, d1 = p.distance(t), p.distance(t + 1e-3)
    assert 0.0 <= d1 - d0 <= 10.0 * 1e-3 + 1e-9
    assert p.distance(ramp + 1e-9) == pytest.approx(p.distance(ramp), abs=1e-6)


def test_body_motion_is_small_and_seeded():
    a = BodyMotion(np.random.default_rng(5))
    b = BodyMotion(np.random.default_rng(5))
    tt = np.linspace(0, 20, 500)
    ra = np.array([a.offsets(t) for t in tt])
    np.testing.assert_array_equal(ra, np.array([b.offsets(t) for t in tt]))
    assert np.abs(ra[:, :2]).max() < math.radians(0.3) and np.abs(ra[:, 2]).max() < 0.02
