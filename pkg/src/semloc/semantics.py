"""Per-point label files, taxonomy remapping over clouds and class filters."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PointCloud, RemapTable, UnifiedClass, parse_classes
from .core.errors import ConfigError, DataError

CAMERA_PROJECTION = "camera-projection"
PER_POINT_FILE = "per-point-file"


@dataclass(frozen=True)
class LabelSource:
    kind: str
    taxonomy: str = "unified"

    def __post_init__(self):
        if self.kind not in (CAMERA_PROJECTION, PER_POINT_FILE):
            raise ConfigError(f"unknown label source {self.kind!r}")


@dataclass(frozen=True)
class FilterSpec:
    """Classes to drop; unlabeled points are kept iff ``keep_unlabeled``."""

    drop_classes: frozenset = frozenset()
    keep_unlabeled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "drop_classes", frozenset(UnifiedClass(c) for c in self.drop_classes))

    @classmethod
    def from_names(cls, names=(), keep_unlabeled=True):
        return cls(parse_classes(names), keep_unlabeled)

    def to_json(self):
        return {"drop": sorted(c.label for c in self.drop_classes), "keep_unlabeled": self.keep_unlabeled}

    @property
    def is_empty(self):
        return not self.drop_classes and self.keep_unlabeled

    def keep_mask(self, labels) -> np.ndarray:
        labels = np.asarray(labels)
        drop = np.zeros(256, dtype=bool)
        for c in self.drop_classes:
            drop[int(c)] = True
        if not self.keep_unlabeled:
            drop[int(UnifiedClass.UNLABELED)] = True
        return ~drop[labels.astype(np.intp)]


def read_label_file(path) -> np.ndarray:
    """Raw little-endian u32 ids."""
    try:
        return np.fromfile(path, dtype="<u4")
    except OSError as e:
        raise DataError(f"cannot read label file {path}: {e}") from None


def write_label_file(path, ids):
    np.asarray(ids, dtype="<u4").tofile(path)


def load_point_labels(path, cloud: PointCloud, table: RemapTable) -> PointCloud:
    ids = read_label_file(path)
    if len(ids) != len(cloud):
        raise DataError(f"{Path(path).name}: {len(ids)} labels for {len(cloud)} points")
    return cloud.with_labels(table.remap_array(ids))


def apply_filter(cloud: PointCloud, spec: FilterSpec) -> PointCloud:
    """Points whose class survives ``spec``, in original order. Unlabeled clouds count as all-unlabeled."""
    if spec.is_empty:
        return cloud
    return cloud.subset(spec.keep_mask(cloud.label_array()))
