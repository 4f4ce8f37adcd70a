"""Global semantic voxel map built from registered, class-filtered clouds."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import CLASS_NAMES, NUM_CLASSES, Pose, PointCloud
from .core.errors import DataError
from .odometry import voxel_keys
from .semantics import FilterSpec, apply_filter

DEFAULT_MAP_VOXEL = 0.2


class SemanticMap:
    """One entry per occupied voxel: first inserted point, class histogram, majority class.

    Representative points are stored as float32, the precision of the PLY export.
    """

    def __init__(self, voxel=DEFAULT_MAP_VOXEL):
        if voxel <= 0:
            raise DataError("map voxel size must be positive")
        self.voxel = float(voxel)
        self._set(np.zeros(0, np.int64), np.zeros((0, 3), np.float32), np.zeros((0, NUM_CLASSES), np.int64))

    # storage grows geometrically; ``keys``, ``points`` and ``histogram`` are views of the used part
    def _set(self, keys, points, histogram):
        self._n = len(keys)
        self._keys, self._points, self._hist = keys.copy(), points.astype(np.float32), histogram.copy()
        order = np.argsort(keys, kind="stable")
        self._skeys, self._srows = keys[order], order.astype(np.int64)

    def _reserve(self, n):
        cap = len(self._keys)
        if n <= cap:
            return
        cap = max(n, 2 * cap, 1024)
        for name, shape in (("_keys", (cap,)), ("_points", (cap, 3)), ("_hist", (cap, NUM_CLASSES))):
            old = getattr(self, name)
            buf = np.zeros(shape, old.dtype)
            buf[:self._n] = old[:self._n]
            setattr(self, name, buf)

    @property
    def keys(self):
        return self._keys[:self._n]

    @property
    def points(self):
        return self._points[:self._n]

    @property
    def histogram(self):
        return self._hist[:self._n]

    def __len__(self):
        return self._n

    def _lookup(self, keys):
        """Row index per key, -1 where absent."""
        if not self._n:
            return np.full(len(keys), -1, np.int64)
        pos = np.clip(np.searchsorted(self._skeys, keys), 0, self._n - 1)
        return np.where(self._skeys[pos] == keys, self._srows[pos], -1)

    def insert(self, points, labels=None):
        points = np.asarray(points, float).reshape(-1, 3)
        if not len(points):
            return
        labels = np.zeros(len(points), np.int64) if labels is None else np.asarray(labels, np.int64)
        keys = voxel_keys(points, self.voxel)
        uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        rows = self._lookup(uniq)
        new = np.flatnonzero(rows < 0)
        if len(new):
            start = self._n
            by_first = new[np.argsort(first[new], kind="stable")]  # rows follow first-appearance order
            rows[by_first] = start + np.arange(len(new))
            self._reserve(start + len(new))
            self._keys[start:start + len(new)] = uniq[by_first]
            self._points[start:start + len(new)] = points[first[by_first]]
            self._n += len(new)
            pos = np.searchsorted(self._skeys, uniq[new])  # uniq is sorted, so uniq[new] is too
            self._skeys = np.insert(self._skeys, pos, uniq[new])
            self._srows = np.insert(self._srows, pos, rows[new])
        np.add.at(self._hist, (rows[inv.reshape(-1)], labels), 1)

    @property
    def majority(self) -> np.ndarray:
        """argmax of each histogram row; ties go to the lower class id."""
        return np.argmax(self.histogram, axis=1).astype(np.uint16) if len(self) else np.zeros(0, np.uint16)

    @property
    def counts(self) -> np.ndarray:
        return self.histogram.sum(axis=1)

    def merge(self, other: "SemanticMap") -> "SemanticMap":
        """New map with summed histograms; representatives from ``self`` first, then ``other``."""
        if other.voxel != self.voxel:
            raise DataError("cannot merge maps with different voxel sizes")
        out = SemanticMap(self.voxel)
        rows = self._lookup(other.keys)
        have = rows >= 0
        hist = self.histogram.copy()
        hist[rows[have]] += other.histogram[have]
        out._set(np.concatenate([self.keys, other.keys[~have]]), np.concatenate([self.points, other.points[~have]]),
                 np.concatenate([hist, other.histogram[~have]]))
        return out

    def histogram_by_key(self) -> dict:
        return {int(k): tuple(h) for k, h in zip(self.keys, self.histogram)}

    def class_voxel_counts(self) -> dict:
        maj = self.majority
        return {CLASS_NAMES[c]: int((maj == c).sum()) for c in range(NUM_CLASSES)}

    def drop_classes(self, classes) -> "SemanticMap":
        """Zero the histogram mass of ``classes`` and remove voxels left empty."""
        out = SemanticMap(self.voxel)
        h = self.histogram.copy()
        for c in classes:
            h[:, int(c)] = 0
        keep = h.sum(axis=1) > 0
        out._set(self.keys[keep], self.points[keep], h[keep])
        return out


def build_map(poses, clouds, spec: FilterSpec | None = None, voxel=DEFAULT_MAP_VOXEL) -> SemanticMap:
    """Filter each cloud, move it into the world with its pose, accumulate class histograms."""
    poses, clouds = list(poses), list(clouds)
    if len(poses) != len(clouds):
        raise DataError(f"{len(poses)} poses for {len(clouds)} clouds")
    spec = spec or FilterSpec()
    m = SemanticMap(voxel)
    for pose, cloud in zip(poses, clouds):
        c = apply_filter(cloud, spec)
        m.insert(pose.transform_points(c.points), c.label_array())
    return m


_PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("class", "<u2")])


def export_ply(m: SemanticMap, path):
    """Binary little-endian PLY: float32 x, y, z and uint16 majority class per voxel."""
    arr = np.zeros(len(m), dtype=_PLY_DTYPE)
    if len(m):
        arr["x"], arr["y"], arr["z"] = m.points[:, 0], m.points[:, 1], m.points[:, 2]
        arr["class"] = m.majority
    header = ("ply\nformat binary_little_endian 1.0\ncomment semloc semantic voxel map\n"
              f"element vertex {len(arr)}\nproperty float x\nproperty float y\nproperty float z\n"
              "property ushort class\nend_header\n")
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(arr.tobytes())
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from None


def read_ply(path):
    """Read a file written by :func:`export_ply`; returns (points float32 (N,3), classes uint16)."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise DataError(f"{path}: only binary little-endian PLY is supported")
    props = [ln.split()[-1] for ln in header if ln.startswith("property")]
    if props != ["x", "y", "z", "class"]:
        raise DataError(f"{path}: unexpected vertex properties {props}")
    n = next(int(ln.split()[-1]) for ln in header if ln.startswith("element vertex"))
    body = data[end + len(b"end_header\n"):]
    if len(body) != n * _PLY_DTYPE.itemsize:
        raise DataError(f"{path}: expected {n} vertices")
    arr = np.frombuffer(body, dtype=_PLY_DTYPE)
    pts = np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(np.float32)
    return pts, arr["class"].copy()


def write_class_csv(m: SemanticMap, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_name", "voxel_count"])
        for name, n in m.class_voxel_counts().items():
            w.writerow([name, n])


def world_cloud(m: SemanticMap) -> PointCloud:
    return PointCloud(m.points.astype(float), 0, labels=m.majority.astype(np.uint8))


__all__ = ["SemanticMap", "build_map", "export_ply", "read_ply", "write_class_csv", "world_cloud",
           "DEFAULT_MAP_VOXEL", "Pose"]
