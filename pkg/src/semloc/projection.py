"""Label LiDAR points by projecting them into segmented camera images."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DEPTH_MIN, CameraModel, PointCloud, UnifiedClass
from .core.errors import DataError
from .core.taxonomy import NUM_CLASSES

log = logging.getLogger(__name__)

NO_CAMERA = -1


@dataclass(frozen=True, eq=False)
class LabelImage:
    """Per-pixel :class:`UnifiedClass` ids, row-major ``(height, width)``."""

    classes: np.ndarray
    stamp: int = 0
    camera: str = ""

    def __post_init__(self):
        c = np.ascontiguousarray(self.classes)
        if c.ndim != 2:
            raise DataError("label image must be 2-D")
        if c.size and (c.min() < 0 or c.max() >= NUM_CLASSES):
            raise DataError(f"label image {self.camera}@{self.stamp} holds ids outside the unified taxonomy")
        c = c.astype(np.uint8 if NUM_CLASSES <= 256 else np.uint16)
        c.setflags(write=False)
        object.__setattr__(self, "classes", c)

    @property
    def width(self):
        return self.classes.shape[1]

    @property
    def height(self):
        return self.classes.shape[0]

    def save_png(self, path):
        arr = self.classes
        img = Image.fromarray(arr, mode="L") if arr.dtype == np.uint8 else Image.fromarray(arr.astype(np.uint16))
        img.save(path, format="PNG", optimize=False)

    @classmethod
    def load_png(cls, path, camera=""):
        path = Path(path)
        try:
            with Image.open(path) as img:
                arr = np.array(img)
        except OSError as e:
            raise DataError(f"cannot read label image {path}: {e}") from None
        try:
            stamp = int(path.stem)
        except ValueError:
            stamp = 0
        return cls(arr, stamp, camera or path.parent.name)


@dataclass(frozen=True, eq=False)
class ProjectionOutcome:
    """Per-point labeling result.

    ``source`` holds the index of the labeling camera in ``cameras`` or -1.
    ``uv`` and ``depth`` are NaN for points that hit no camera.
    """

    labels: np.ndarray
    source: np.ndarray
    uv: np.ndarray
    depth: np.ndarray
    cameras: tuple = ()
    new_labels: dict = field(default_factory=dict)
    skipped: tuple = ()

    @property
    def labeled(self):
        return self.source != NO_CAMERA


def project_point(x_cam, model: CameraModel, depth_min=DEPTH_MIN):
    """Pixel ``(u, v)`` of a camera-frame point, or ``None`` outside the image or behind the camera."""
    uv, ok = model.project(np.asarray(x_cam, dtype=float).reshape(1, 3), depth_min)
    return (float(uv[0, 0]), float(uv[0, 1])) if ok[0] else None


def nearest_pixel(uv, width, height):
    """Integer pixel indices; rounding half toward -inf, clamped to the image."""
    col = np.clip(np.ceil(uv[:, 0] - 0.5), 0, width - 1).astype(np.int64)
    row = np.clip(np.ceil(uv[:, 1] - 0.5), 0, height - 1).astype(np.int64)
    return col, row


def label_cloud(cloud: PointCloud, model: CameraModel, image: LabelImage, zbuffer=False, depth_min=DEPTH_MIN):
    """Label a vehicle-frame cloud from one camera.

    Every in-frustum point takes the class of its nearest pixel. With
    ``zbuffer`` only the nearest point per pixel is labeled.
    """
    if image.width != model.width or image.height != model.height:
        raise DataError(
            f"camera {model.name}: image is {image.width}x{image.height}, model expects {model.width}x{model.height}"
        )
    n = len(cloud)
    pts_cam = model.extrinsic.transform_points(cloud.points) if n else np.zeros((0, 3))
    uv, ok = model.project(pts_cam, depth_min)
    idx = np.flatnonzero(ok)
    labels = np.zeros(n, dtype=np.uint8)
    source = np.full(n, NO_CAMERA, dtype=np.int64)
    depth = np.full(n, np.nan)
    out_uv = np.full((n, 2), np.nan)
    if idx.size:
        col, row = nearest_pixel(uv[idx], model.width, model.height)
        if zbuffer:
            pix = row * model.width + col
            order = np.lexsort((pts_cam[idx, 2], pix))
            first = np.ones(len(order), bool)
            first[1:] = pix[order[1:]] != pix[order[:-1]]
            keep = order[first]
            idx, col, row = idx[keep], col[keep], row[keep]
        labels[idx] = image.classes[row, col]
        source[idx] = 0
        depth[idx] = pts_cam[idx, 2]
        out_uv[idx] = uv[idx]
    hit = labels != UnifiedClass.UNLABELED
    source[~hit] = NO_CAMERA
    return ProjectionOutcome(labels, source, out_uv, np.where(hit, depth, np.nan),
                             (model.name,), {model.name: int(hit.sum())})


def fuse_cameras(cloud: PointCloud, cameras, images, zbuffer=False, depth_min=DEPTH_MIN):
    """Label ``cloud`` from several cameras, processed in ascending priority.

    A point keeps the first non-unlabeled class it receives. ``images`` maps
    camera name to :class:`LabelImage`; cameras without an image are skipped
    and reported in ``skipped``. Returns ``(labeled cloud, outcome)``.
    """
    cams = sorted(cameras, key=lambda c: c.priority)
    n = len(cloud)
    labels = np.zeros(n, dtype=np.uint8)
    source = np.full(n, NO_CAMERA, dtype=np.int64)
    uv = np.full((n, 2), np.nan)
    depth = np.full(n, np.nan)
    new_labels, skipped = {}, []
    for k, cam in enumerate(cams):
        img = images.get(cam.name)
        if img is None:
            skipped.append(cam.name)
            continue
        res = label_cloud(cloud, cam, img, zbuffer, depth_min)
        fresh = res.labeled & (source == NO_CAMERA)
        labels[fresh] = res.labels[fresh]
        source[fresh] = k
        uv[fresh] = res.uv[fresh]
        depth[fresh] = res.depth[fresh]
        new_labels[cam.name] = int(fresh.sum())
    if skipped:
        log.warning("no image for cameras %s at stamp %d; skipped", skipped, cloud.stamp)
    outcome = ProjectionOutcome(labels, source, uv, depth, tuple(c.name for c in cams), new_labels, tuple(skipped))
    return cloud.with_labels(labels), outcome


def backproject_hits(outcome: ProjectionOutcome, cameras):
    """Camera-frame points reconstructed from recorded pixel hits and depths."""
    cams = sorted(cameras, key=lambda c: c.priority)
    out = np.full((len(outcome.labels), 3), np.nan)
    for k, cam in enumerate(cams):
        sel = outcome.source == k
        if sel.any():
            out[sel] = cam.backproject(outcome.uv[sel], outcome.depth[sel])
    return out
