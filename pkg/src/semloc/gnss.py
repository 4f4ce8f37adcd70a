"""GNSS position records: CSV I/O and geodetic to local tangent-plane conversion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core.errors import DataError

GNSS_HEADER = ("stamp_ns", "x", "y", "z", "sigma_m")

# WGS84
_A = 6378137.0
_F = 1.0 / 298.257223563
_E2 = _F * (2.0 - _F)


@dataclass(frozen=True)
class GnssFix:
    stamp: int
    position: tuple
    sigma: float


def write_gnss_csv(path, fixes):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GNSS_HEADER)
        for fx in fixes:
            w.writerow([int(fx.stamp), *(repr(float(v)) for v in fx.position), repr(float(fx.sigma))])


def read_gnss_csv(path) -> list:
    """Parse a GNSS CSV; errors carry the offending line number."""
    fixes = []
    try:
        f = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot read GNSS file {path}: {e}") from None
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != GNSS_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(GNSS_HEADER)}")
        for no, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{no}: expected 5 fields, got {len(row)}")
            try:
                stamp = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as e:
                raise DataError(f"{path}:{no}: {e}") from None
            if not all(math.isfinite(v) for v in vals) or vals[3] < 0 or stamp < 0:
                raise DataError(f"{path}:{no}: invalid values")
            fixes.append(GnssFix(stamp, tuple(vals[:3]), vals[3]))
    return fixes


def geodetic_to_ecef(lat_deg, lon_deg, alt):
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    n = _A / np.sqrt(1.0 - _E2 * np.sin(lat) ** 2)
    x = (n + alt) * np.cos(lat) * np.cos(lon)
    y = (n + alt) * np.cos(lat) * np.sin(lon)
    z = (n * (1.0 - _E2) + alt) * np.sin(lat)
    return np.stack([x, y, z], axis=-1)


def geodetic_to_enu(lat_deg, lon_deg, alt, origin):
    """WGS84 latitude/longitude/altitude to east-north-up meters about ``origin = (lat0, lon0, alt0)``."""
    lat0, lon0, alt0 = origin
    d = geodetic_to_ecef(lat_deg, lon_deg, alt) - geodetic_to_ecef(lat0, lon0, alt0)
    sl, cl = math.sin(math.radians(lat0)), math.cos(math.radians(lat0))
    so, co = math.sin(math.radians(lon0)), math.cos(math.radians(lon0))
    R = np.array([[-so, co, 0.0], [-sl * co, -sl * so, cl], [cl * co, cl * so, sl]])
    return d @ R.T
