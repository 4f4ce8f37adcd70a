"""Simulated LiDAR and semantic camera, both backed by the world ray caster."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Calibration, CameraModel, PointCloud, Pose
from ..core.errors import ConfigError
from ..projection import LabelImage
from .world import World, raycast

NS_PER_S = 1_000_000_000

# vehicle (x fwd, y left, z up) -> camera optical frame (z fwd, x right, y down)
VEHICLE_TO_OPTICAL = Pose.from_matrix(
    np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
)


@dataclass(frozen=True)
class LidarModel:
    rows: int = 128
    cols: int = 2048
    vfov_deg: float = 45.0
    max_range: float = 100.0
    range_noise: float = 0.0
    period_s: float = 0.1
    elevation_center_deg: float = 0.0

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ConfigError("lidar rows/cols must be positive")
        if not 0 < self.vfov_deg < 180:
            raise ConfigError("lidar vertical FOV must lie in (0, 180) degrees")

    def elevations(self):
        half = math.radians(self.vfov_deg) / 2
        c = math.radians(self.elevation_center_deg)
        if self.rows == 1:
            return np.array([c])
        return np.linspace(c + half, c - half, self.rows)

    def azimuths(self):
        return 2 * np.pi * np.arange(self.cols) / self.cols

    def ray_grid(self):
        """Unit directions in the sensor frame, row-major, plus the column index per ray."""
        el = self.elevations()[:, None]
        az = self.azimuths()[None, :]
        d = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el) * np.ones_like(az)], axis=-1
        ).reshape(-1, 3)
        col = np.broadcast_to(np.arange(self.cols)[None, :], (self.rows, self.cols)).reshape(-1)
        return d, col

    def to_json(self):
        return dict(rows=self.rows, cols=self.cols, vfov_deg=self.vfov_deg, max_range=self.max_range,
                    range_noise=self.range_noise, period_s=self.period_s,
                    elevation_center_deg=self.elevation_center_deg)


@dataclass
class LidarScan:
    cloud: PointCloud  # sensor frame, labels = true classes
    prim: np.ndarray  # primitive id per point
    dirs: np.ndarray  # unit ray direction per point (sensor frame)
    ranges: np.ndarray


def raycast_lidar(world: World, pose: Pose, model: LidarModel, time_s: float, stamp_ns: int = 0,
                  rng: np.random.Generator | None = None) -> LidarScan:
    """Scan ``world`` from a sensor at ``pose`` (sensor -> world).

    The sensor pose is held fixed over the sweep; moving objects are evaluated
    at each ray's emission time ``time_s + col / cols * period``.
    """
    d_local, col = model.ray_grid()
    rel_s = col / model.cols * model.period_s
    d_world = d_local @ pose.R.T
    t, cls, prim = raycast(world, pose.translation, d_world, time_s + rel_s, model.max_range)
    hit = np.isfinite(t)
    r = t[hit]
    if model.range_noise > 0:
        if rng is None:
            raise ValueError("range noise needs an rng")
        r = r + rng.normal(0.0, model.range_noise, size=r.shape)
    pts = d_local[hit] * r[:, None]
    rel_ns = np.round(rel_s[hit] * NS_PER_S).astype(np.int64)
    cloud = PointCloud(pts, stamp_ns, rel_ns, cls[hit].astype(np.uint8))
    return LidarScan(cloud, prim[hit], d_local[hit], r)


def camera_world_pose(vehicle_pose: Pose, cam: CameraModel) -> Pose:
    """Camera -> world, given vehicle -> world."""
    return vehicle_pose @ cam.extrinsic.inverse()


def render_label_image(world: World, camera_pose: Pose, model: CameraModel, time_s: float = 0.0,
                       stamp_ns: int = 0, max_range: float = 100.0) -> LabelImage:
    """Ground-truth segmentation: one ray per pixel center, unlabeled on a miss or beyond ``max_range``.

    ``camera_pose`` maps camera frame -> world.
    """
    u, v = np.meshgrid(np.arange(model.width, dtype=float), np.arange(model.height, dtype=float))
    rays = model.pixel_rays(u.ravel(), v.ravel())
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    d_world = rays @ camera_pose.R.T
    axis = camera_pose.R[:, 2]
    half = float(np.arccos(np.clip((d_world @ axis).min(), -1.0, 1.0))) + 1e-6
    t, cls, _ = raycast(world, camera_pose.translation, d_world, time_s, max_range, (axis, half))
    cls = np.where(np.isfinite(t), cls, 0)
    return LabelImage(cls.reshape(model.height, model.width), stamp_ns, model.name)


@dataclass(frozen=True)
class RigSpec:
    lidar: LidarModel = field(default_factory=LidarModel)
    lidar_extrinsic: Pose = field(default_factory=lambda: Pose.from_translation([0.0, 0.0, 1.9]))
    cameras: tuple = ()
    gnss_rate_hz: float = 1.0
    gnss_sigma: float = 0.1
    lidar_offset_ns: int = 0
    lidar_jitter_ns: int = 0
    camera_offset_ns: int = 5_000_000
    camera_jitter_ns: int = 2_000_000

    def __post_init__(self):
        prios = [c.priority for c in self.cameras]
        if len(set(prios)) != len(prios):
            raise ConfigError("camera priorities must be unique")

    def calibration(self) -> Calibration:
        return Calibration(tuple(self.cameras), self.lidar_extrinsic)

    def to_json(self):
        return {
            "lidar": self.lidar.to_json(),
            "cameras": [c.name for c in self.cameras],
            "gnss_rate_hz": self.gnss_rate_hz,
            "gnss_sigma": self.gnss_sigma,
            "lidar_offset_ns": self.lidar_offset_ns,
            "lidar_jitter_ns": self.lidar_jitter_ns,
            "camera_offset_ns": self.camera_offset_ns,
            "camera_jitter_ns": self.camera_jitter_ns,
        }


# (name suffix, yaw deg, horizontal fov deg, width scale); front tele/medium/wide first
_CAMERA_LAYOUT = [
    ("tele", 0.0, 30.0, 1.0),
    ("medium", 0.0, 60.0, 1.0),
    ("wide", 0.0, 100.0, 1.0),
    ("front-left", 60.0, 90.0, 1.0),
    ("rear-left", 120.0, 90.0, 1.0),
    ("rear", 180.0, 90.0, 1.0),
    ("rear-right", 240.0, 90.0, 1.0),
    ("front-right", 300.0, 90.0, 1.0),
]


def default_cameras(width=320, height=240, mount=(0.0, 0.0, 1.7), radius=0.3, distortion=(-0.02, 0.002, 0.0, 0.0, 0.0)):
    """Eight cameras covering 360 degrees; priority order tele, medium, wide, then the ring."""
    cams = []
    for k, (_, yaw, fov, _) in enumerate(_CAMERA_LAYOUT):
        a = math.radians(yaw)
        pos = (mount[0] + radius * math.cos(a), mount[1] + radius * math.sin(a), mount[2])
        cam_to_vehicle = Pose.from_rpy(0, 0, a, pos) @ VEHICLE_TO_OPTICAL.inverse()
        cams.append(CameraModel.from_fov(f"cam{k}", width, height, fov, cam_to_vehicle.inverse(), distortion, k))
    return tuple(cams)


def default_rig(lidar=None, camera_width=320, camera_height=240, **kw) -> RigSpec:
    return RigSpec(lidar=lidar or LidarModel(), cameras=default_cameras(camera_width, camera_height), **kw)


def fast_lidar(**kw) -> LidarModel:
    """A reduced-resolution sensor for quick experiments and tests."""
    base = dict(rows=32, cols=1024, vfov_deg=45.0, max_range=80.0, range_noise=0.01)
    base.update(kw)
    return LidarModel(**base)
