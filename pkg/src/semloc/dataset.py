"""On-disk dataset layout shared by the simulator and the pipeline.

::

    root/
      lidar/<stamp_ns>.bin      float32 x, y, z, rel_time_s per point (sensor frame)
      labels/<stamp_ns>.label   uint32 class id per point (SemanticKITTI ids by default)
      cam<k>/<stamp_ns>.png     8-bit unified class ids
      gnss.csv                  stamp_ns,x,y,z,sigma_m
      calib.json                cameras + LiDAR extrinsic
      gt_tum.txt                ground-truth vehicle trajectory (optional)
      meta.json                 generator metadata (optional)
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import NS_PER_S, Calibration, PointCloud
from .core.errors import DataError
from .evaluation import Trajectory
from .gnss import read_gnss_csv
from .projection import LabelImage


def write_cloud_bin(path, cloud: PointCloud):
    rel = cloud.rel_time.astype(np.float64) / NS_PER_S
    arr = np.column_stack([cloud.points, rel]).astype("<f4")
    arr.tofile(path)


def read_cloud_bin(path, stamp=0) -> PointCloud:
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as e:
        raise DataError(f"cannot read cloud {path}: {e}") from None
    if raw.size % 4:
        raise DataError(f"{path}: size {raw.size} floats is not a multiple of 4")
    raw = raw.reshape(-1, 4).astype(np.float64)
    rel = np.round(raw[:, 3] * NS_PER_S).astype(np.int64)
    return PointCloud(raw[:, :3], stamp, rel)


def _stamps(directory: Path, suffix):
    out = {}
    if not directory.is_dir():
        return out
    for p in directory.iterdir():
        if p.suffix == suffix:
            try:
                out[int(p.stem)] = p
            except ValueError:
                raise DataError(f"{p}: file name is not an integer nanosecond stamp") from None
    return dict(sorted(out.items()))


class Dataset:
    """Read access to a dataset directory; streams ordered by filename stamp."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DataError(f"dataset directory {self.root} does not exist")
        self.lidar_files = _stamps(self.root / "lidar", ".bin")
        if not self.lidar_files:
            raise DataError(f"{self.root}: no LiDAR scans under lidar/")
        self.label_files = _stamps(self.root / "labels", ".label")
        calib = self.root / "calib.json"
        if not calib.exists():
            raise DataError(f"{self.root}: missing calib.json")
        self.calibration = Calibration.load(calib)
        self.image_files = {c.name: _stamps(self.root / c.name, ".png") for c in self.calibration.cameras}

    @property
    def lidar_stamps(self):
        return list(self.lidar_files)

    def camera_stamps(self, name):
        return list(self.image_files.get(name, {}))

    def cloud(self, stamp) -> PointCloud:
        return read_cloud_bin(self.lidar_files[stamp], stamp)

    def label_path(self, stamp):
        try:
            return self.label_files[stamp]
        except KeyError:
            raise DataError(f"{self.root}: no label file for scan {stamp}") from None

    def image(self, camera, stamp) -> LabelImage:
        return LabelImage.load_png(self.image_files[camera][stamp], camera)

    def gnss(self):
        return read_gnss_csv(self.root / "gnss.csv")

    def ground_truth(self):
        p = self.root / "gt_tum.txt"
        return Trajectory.load_tum(p) if p.exists() else None

    def meta(self):
        p = self.root / "meta.json"
        return json.loads(p.read_text()) if p.exists() else {}
