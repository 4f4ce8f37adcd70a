"""Pinhole camera with radial-tangential distortion, and the rig calibration file."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Pose

DEPTH_MIN = 0.1
UNDISTORT_ITERATIONS = 10


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics, distortion ``(k1, k2, p1, p2, k3)`` and the vehicle->camera extrinsic.

    Camera frame convention: z forward, x right, y down.
    """

    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: Pose = field(default_factory=Pose.identity)
    distortion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    priority: int = 0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"camera {self.name}: focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigError(f"camera {self.name}: principal point outside the image")
        d = tuple(float(v) for v in self.distortion)
        if len(d) != 5:
            raise ConfigError(f"camera {self.name}: distortion needs 5 coefficients (k1,k2,p1,p2,k3)")
        object.__setattr__(self, "distortion", d)

    @classmethod
    def from_fov(cls, name, width, height, hfov_deg, extrinsic=None, distortion=(0.0,) * 5, priority=0):
        f = 0.5 * width / math.tan(math.radians(hfov_deg) / 2)
        return cls(name, width, height, f, f, width / 2.0, height / 2.0,
                   extrinsic if extrinsic is not None else Pose.identity(), distortion, priority)

    @property
    def has_distortion(self):
        return any(self.distortion)

    def distort(self, x, y):
        """Apply the distortion model to normalized image coordinates."""
        k1, k2, p1, p2, k3 = self.distortion
        r2 = x * x + y * y
        radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
        yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
        return xd, yd

    def undistort(self, xd, yd, iterations=UNDISTORT_ITERATIONS):
        """Fixed-point inversion of :meth:`distort`."""
        if not self.has_distortion:
            return xd, yd
        k1, k2, p1, p2, k3 = self.distortion
        x, y = xd, yd
        for _ in range(iterations):
            r2 = x * x + y * y
            icdist = 1.0 / (1 + r2 * (k1 + r2 * (k2 + r2 * k3)))
            dx = 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
            dy = p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
            x = (xd - dx) * icdist
            y = (yd - dy) * icdist
        return x, y

    def project(self, pts_cam, depth_min=DEPTH_MIN):
        """Project camera-frame points. Returns ``(uv, valid)``; invalid rows of ``uv`` are NaN."""
        pts = np.atleast_2d(np.asarray(pts_cam, dtype=float))
        z = pts[:, 2]
        valid = z > depth_min
        uv = np.full((len(pts), 2), np.nan)
        if valid.any():
            zv = z[valid]
            x, y = self.distort(pts[valid, 0] / zv, pts[valid, 1] / zv)
            u = self.fx * x + self.cx
            v = self.fy * y + self.cy
            uv[valid, 0] = u
            uv[valid, 1] = v
        inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)
        uv[~inside] = np.nan
        return uv, inside

    def pixel_rays(self, u, v):
        """Camera-frame directions ``(x, y, 1)`` through pixel coordinates."""
        xd = (np.asarray(u, dtype=float) - self.cx) / self.fx
        yd = (np.asarray(v, dtype=float) - self.cy) / self.fy
        x, y = self.undistort(xd, yd)
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def backproject(self, uv, depth):
        """Camera-frame point at ``depth`` (z) behind pixel ``uv``."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        rays = self.pixel_rays(uv[:, 0], uv[:, 1])
        return rays * np.asarray(depth, dtype=float).reshape(-1, 1)

    def to_dict(self):
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "distortion": list(self.distortion),
            "extrinsic": list(self.extrinsic.xyz_quat()),
            "priority": self.priority,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                name=d["name"],
                width=int(d["width"]),
                height=int(d["height"]),
                fx=float(d["fx"]),
                fy=float(d["fy"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                extrinsic=pose_from_list(d["extrinsic"]),
                distortion=tuple(d.get("distortion", (0.0,) * 5)),
                priority=int(d.get("priority", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"camera entry missing field {e}") from None


def pose_from_list(values) -> Pose:
    """``[tx, ty, tz, qx, qy, qz, qw]`` -> Pose."""
    if len(values) != 7:
        raise ConfigError(f"pose needs 7 numbers (tx ty tz qx qy qz qw), got {len(values)}")
    v = [float(x) for x in values]
    return Pose.from_xyz_quat(v[:3], v[3:])


@dataclass(frozen=True)
class Calibration:
    """Camera rig plus LiDAR mounting.

    ``lidar_extrinsic`` maps LiDAR frame -> vehicle frame, camera extrinsics map
    vehicle frame -> camera frame.
    """

    cameras: tuple
    lidar_extrinsic: Pose = field(default_factory=Pose.identity)
    gnss_lever_arm: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        cams = tuple(sorted(self.cameras, key=lambda c: c.priority))
        prios = [c.priority for c in cams]
        if len(set(prios)) != len(prios):
            raise ConfigError(f"camera priorities must be unique, got {prios}")
        object.__setattr__(self, "cameras", cams)

    def camera(self, name) -> CameraModel:
        for c in self.cameras:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return {
            "pose_format": "tx ty tz qx qy qz qw",
            "cameras": [c.to_dict() for c in self.cameras],
            "camera_extrinsic_direction": "vehicle_to_camera",
            "lidar": {"extrinsic": list(self.lidar_extrinsic.xyz_quat()), "direction": "lidar_to_vehicle"},
            "gnss": {"lever_arm": list(self.gnss_lever_arm)},
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Calibration":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read calibration {path}: {e}") from None
        cams = tuple(CameraModel.from_dict(c) for c in doc.get("cameras", []))
        lidar = pose_from_list(doc["lidar"]["extrinsic"]) if "lidar" in doc else Pose.identity()
        lever = tuple(doc.get("gnss", {}).get("lever_arm", (0.0, 0.0, 0.0)))
        return cls(cams, lidar, lever)

    def with_cameras(self, cameras):
        return replace(self, cameras=tuple(cameras))
