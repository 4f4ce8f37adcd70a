from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def _ro(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points in a sensor or vehicle frame.

    ``rel_time`` is the per-point offset from ``stamp`` in nanoseconds. ``labels``
    holds :class:`UnifiedClass` ids or is ``None`` for an unlabeled cloud.
    """

    points: np.ndarray
    stamp: int = 0
    rel_time: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise DataError("point cloud contains non-finite coordinates")
        n = len(pts)
        rt = np.zeros(n, dtype=np.int64) if self.rel_time is None else np.asarray(self.rel_time)
        if len(rt) != n:
            raise DataError(f"rel_time has {len(rt)} entries for {n} points")
        if self.labels is not None and len(self.labels) != n:
            raise DataError(f"labels have {len(self.labels)} entries for {n} points")
        if int(self.stamp) < 0:
            raise DataError("negative timestamp")
        object.__setattr__(self, "points", _ro(pts, np.float64))
        object.__setattr__(self, "rel_time", _ro(rt, np.int64))
        object.__setattr__(self, "stamp", int(self.stamp))
        if self.labels is not None:
            object.__setattr__(self, "labels", _ro(self.labels, np.uint8))

    def __len__(self):
        return len(self.points)

    @property
    def is_labeled(self):
        return self.labels is not None

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            self.points[index],
            self.stamp,
            self.rel_time[index],
            None if self.labels is None else self.labels[index],
        )

    def transformed(self, pose) -> "PointCloud":
        return PointCloud(pose.transform_points(self.points), self.stamp, self.rel_time, self.labels)

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.points, self.stamp, self.rel_time, labels)

    def without_labels(self) -> "PointCloud":
        return PointCloud(self.points, self.stamp, self.rel_time, None)

    def label_array(self) -> np.ndarray:
        """Labels, with unlabeled (0) standing in for a missing label array."""
        if self.labels is None:
            return np.zeros(len(self), dtype=np.uint8)
        return self.labels

    @classmethod
    def empty(cls, stamp=0, labeled=False):
        return cls(np.zeros((0, 3)), stamp, None, np.zeros(0, np.uint8) if labeled else None)
