import math

import numpy as np
import pytest

from semloc.core import PointCloud
from semloc.core.errors import DataError
from semloc.dataset import Dataset, read_cloud_bin, write_cloud_bin
from semloc.gnss import GnssFix, geodetic_to_enu, read_gnss_csv, write_gnss_csv


def test_gnss_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    fixes = [GnssFix(int(s), tuple(rng.normal(size=3) * 1e3), 0.1) for s in sorted(rng.integers(0, 10**18, 20))]
    write_gnss_csv(tmp_path / "g.csv", fixes)
    assert read_gnss_csv(tmp_path / "g.csv") == fixes


@pytest.mark.parametrize("body, line", [
    ("stamp,x,y,z,sigma\n", 1),
    ("stamp_ns,x,y,z,sigma_m\n1,0,0,0,0.1\n2,0,0\n", 3),
    ("stamp_ns,x,y,z,sigma_m\n1,0,0,nan,0.1\n", 2),
    ("stamp_ns,x,y,z,sigma_m\nabc,0,0,0,0.1\n", 2),
])
def test_gnss_csv_errors_name_the_line(tmp_path, body, line):
    p = tmp_path / "g.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=f"g.csv:{line}:"):
        read_gnss_csv(p)


def test_geodetic_to_enu():
    origin = (49.0, 8.4, 110.0)
    np.testing.assert_allclose(geodetic_to_enu(*origin, origin), 0.0, atol=1e-9)
    # one arc-second of latitude north and 10 m up
    e, n, u = geodetic_to_enu(49.0 + 1 / 3600, 8.4, 120.0, origin)
    assert abs(e) < 1e-6 and n == pytest.approx(30.9, abs=0.1) and u == pytest.approx(10.0, abs=1e-3)
    e, n, u = geodetic_to_enu(49.0, 8.4 + 1e-4, 110.0, origin)
    assert e == pytest.approx(6378137.0 * math.radians(1e-4) * math.cos(math.radians(49.0)), rel=5e-3)


def test_cloud_bin_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(100, 3)).astype(np.float32).astype(float)
    rel = np.arange(100, dtype=np.int64) * 1000
    write_cloud_bin(tmp_path / "c.bin", PointCloud(pts, 5, rel))
    back = read_cloud_bin(tmp_path / "c.bin", 5)
    np.testing.assert_array_equal(back.points, pts)
    np.testing.assert_allclose(back.rel_time, rel, atol=1)
    assert back.stamp == 5


def test_cloud_bin_rejects_truncated_file(tmp_path):
    np.zeros(7, "<f4").tofile(tmp_path / "c.bin")
    with pytest.raises(DataError, match="multiple of 4"):
        read_cloud_bin(tmp_path / "c.bin")


def test_dataset_errors(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        Dataset(tmp_path / "nope")
    with pytest.raises(DataError, match="no LiDAR scans"):
        Dataset(tmp_path)
    (tmp_path / "lidar").mkdir()
    write_cloud_bin(tmp_path / "lidar" / "12.bin", PointCloud(np.zeros((1, 3))))
    with pytest.raises(DataError, match="calib.json"):
        Dataset(tmp_path)
    (tmp_path / "lidar" / "frame.bin").write_bytes(b"")
    with pytest.raises(DataError, match="not an integer"):
        Dataset(tmp_path)
