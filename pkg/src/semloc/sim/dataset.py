"""Write a complete synthetic dataset (clouds, labels, images, GNSS, calibration, ground truth)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import NS_PER_S, NUM_CLASSES, Pose, UnifiedClass as U, semantickitti_table
from ..core.errors import DataError
from ..dataset import write_cloud_bin
from ..evaluation import Trajectory
from ..gnss import GnssFix, write_gnss_csv
from ..semantics import write_label_file
from .scenarios import Scenario, make_scenario
from .sensors import RigSpec, camera_world_pose, default_rig, raycast_lidar, render_label_image

BASE_STAMP_NS = 1_700_000_000 * NS_PER_S

# dynamic classes that have a dedicated "moving" id in the per-point label taxonomy
_MOVING_NAMES = {U.CAR: "moving-car", U.TRUCK: "moving-truck", U.BUS: "moving-bus", U.PERSON: "moving-person",
                 U.RIDER: "moving-bicyclist", U.MOTORCYCLE: "moving-motorcyclist"}
_STATIC_NAMES = {U.RIDER: "bicyclist"}


def _label_luts():
    """Unified id -> SemanticKITTI id, static and moving variants."""
    sk = semantickitti_table()
    static = np.zeros(NUM_CLASSES, dtype=np.uint32)
    moving = np.zeros(NUM_CLASSES, dtype=np.uint32)
    for c in U:
        static[c] = sk.source_id(_STATIC_NAMES.get(c, c.label))
        moving[c] = sk.source_id(_MOVING_NAMES[c]) if c in _MOVING_NAMES else static[c]
    return static, moving


def corrupt_labels(labels, rate, rng):
    """Flip each label to a uniformly random *other* class with probability ``rate``."""
    labels = np.asarray(labels).astype(np.int64)
    flip = rng.random(labels.shape) < rate
    shift = rng.integers(1, NUM_CLASSES, size=labels.shape)
    return np.where(flip, (labels + shift) % NUM_CLASSES, labels)


@dataclass
class GeneratedDataset:
    root: Path
    scenario: Scenario
    rig: RigSpec
    ground_truth: Trajectory
    lidar_stamps: list


def _jitter(rng, amount, n=None):
    if amount <= 0:
        return np.zeros(n, dtype=np.int64) if n is not None else 0
    return rng.integers(-amount, amount + 1, size=n)


def generate_dataset(scenario, rig: RigSpec | None = None, seed: int = 0, out_dir=".", frames: int = 200,
                     rate_hz: float = 10.0, cameras: bool = True, label_error_rate: float = 0.0,
                     gnss_noise: bool = True) -> GeneratedDataset:
    """Render ``frames`` LiDAR scans (and camera label images) along the scenario's drive.

    Everything random derives from ``seed``; repeated calls write byte-identical files.
    """
    if isinstance(scenario, str):
        scenario = make_scenario(scenario, seed)
    rig = rig or default_rig()
    if not 0.0 <= label_error_rate <= 1.0:
        raise DataError("label_error_rate must lie in [0, 1]")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "lidar").mkdir(exist_ok=True)
    (root / "labels").mkdir(exist_ok=True)
    if cameras:
        for c in rig.cameras:
            (root / c.name).mkdir(exist_ok=True)

    ss = np.random.SeedSequence(seed)
    r_noise, r_label, r_time, r_gnss = (np.random.default_rng(s) for s in ss.spawn(4))
    static_lut, moving_lut = _label_luts()
    dynamic_prims = np.array([b.dynamic for b in scenario.world.boxes] + [False] * len(scenario.world.cylinders))
    period_ns = int(round(NS_PER_S / rate_hz))
    gnss_every = max(1, int(round(rate_hz / rig.gnss_rate_hz))) if rig.gnss_rate_hz > 0 else 0
    lever = np.zeros(3)

    stamps, poses, fixes = [], [], []
    last = -1
    for k in range(frames):
        stamp = BASE_STAMP_NS + k * period_ns + rig.lidar_offset_ns + int(_jitter(r_time, rig.lidar_jitter_ns))
        stamp = max(stamp, last + 1)
        last = stamp
        t = (stamp - BASE_STAMP_NS) / NS_PER_S
        vpose = scenario.pose(t)
        scan = raycast_lidar(scenario.world, vpose @ rig.lidar_extrinsic, rig.lidar, t, stamp, r_noise)
        write_cloud_bin(root / "lidar" / f"{stamp}.bin", scan.cloud)

        true = scan.cloud.label_array().astype(np.int64)
        noisy = corrupt_labels(true, label_error_rate, r_label) if label_error_rate > 0 else true
        moving = np.zeros(len(true), bool)
        obj = scan.prim >= 0
        moving[obj] = dynamic_prims[scan.prim[obj]]
        ids = np.where(moving, moving_lut[noisy], static_lut[noisy])
        write_label_file(root / "labels" / f"{stamp}.label", ids)

        if cameras:
            cam_stamps = stamp + rig.camera_offset_ns + _jitter(r_time, rig.camera_jitter_ns, len(rig.cameras))
            for cam, cs in zip(rig.cameras, cam_stamps):
                cs = int(cs)
                tc = (cs - BASE_STAMP_NS) / NS_PER_S
                img = render_label_image(scenario.world, camera_world_pose(scenario.pose(tc), cam), cam, tc, cs,
                                         max_range=rig.lidar.max_range)
                img.save_png(root / cam.name / f"{cs}.png")

        if gnss_every and k % gnss_every == 0:
            pos = vpose.transform_point(lever)
            if gnss_noise and rig.gnss_sigma > 0:
                pos = pos + r_gnss.normal(0.0, rig.gnss_sigma, 3)
            fixes.append(GnssFix(stamp, tuple(float(v) for v in pos), float(rig.gnss_sigma)))
        stamps.append(stamp)
        poses.append(vpose)

    gt = Trajectory(stamps, poses)
    gt.save_tum(root / "gt_tum.txt")
    write_gnss_csv(root / "gnss.csv", fixes)
    rig.calibration().save(root / "calib.json")
    meta = {
        "generator": f"semloc {__version__}",
        "scenario": scenario.name,
        "seed": int(seed),
        "frames": int(frames),
        "rate_hz": float(rate_hz),
        "cameras": bool(cameras),
        "label_error_rate": float(label_error_rate),
        "label_taxonomy": "semantickitti",
        "image_taxonomy": "unified",
        "gnss_noise": bool(gnss_noise),
        "loop": bool(scenario.loop),
        "rig": rig.to_json(),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return GeneratedDataset(root, scenario, rig, gt, stamps)


def vehicle_pose_at(scenario: Scenario, stamp_ns: int) -> Pose:
    return scenario.pose((stamp_ns - BASE_STAMP_NS) / NS_PER_S)
