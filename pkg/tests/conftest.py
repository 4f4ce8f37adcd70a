import os
from pathlib import Path

import numpy as np
import pytest
from _acceptance import LOG as ACCEPTANCE_LOG

from semloc.odometry import OdometryConfig, preprocess
from semloc.sim import LidarModel, default_rig, raycast_lidar
from semloc.sim.scenarios import urban_block

# 64 x 1024 keeps the 200-frame drives inside the runtime budget on one core
ACCEPTANCE_LIDAR = LidarModel(rows=64, cols=1024, range_noise=0.01)


@pytest.fixture(scope="session")
def urban():
    return urban_block(0)


@pytest.fixture(scope="session")
def scan_5k(urban):
    """About 5000 preprocessed, labeled points of the urban block in the vehicle frame."""
    rig = default_rig()
    scan = raycast_lidar(urban.world, urban.pose(2.0) @ rig.lidar_extrinsic, LidarModel(rows=32, cols=1024), 2.0)
    cloud = preprocess(scan.cloud.transformed(rig.lidar_extrinsic), OdometryConfig())
    keep = np.sort(np.random.default_rng(0).choice(len(cloud), 5000, replace=False))
    return cloud.subset(keep)


@pytest.fixture(scope="session")
def sim_root(tmp_path_factory):
    """Where the 200-frame datasets live; set SEMLOC_SIM_CACHE to keep them between sessions."""
    cached = os.environ.get("SEMLOC_SIM_CACHE")
    if cached:
        Path(cached).mkdir(parents=True, exist_ok=True)
        return Path(cached)
    return tmp_path_factory.mktemp("sim")


def _dataset(root, scenario, cameras=False):
    from semloc.sim import generate_dataset

    out = root / scenario
    if not (out / "gt_tum.txt").exists():
        generate_dataset(scenario, default_rig(ACCEPTANCE_LIDAR), 0, out, frames=200, cameras=cameras)
    return out


@pytest.fixture(scope="session")
def urban_dataset(sim_root):
    return _dataset(sim_root, "urban-block")


@pytest.fixture(scope="session")
def straight_dataset(sim_root):
    return _dataset(sim_root, "straight-road")


@pytest.fixture(scope="session")
def traffic_dataset(sim_root):
    return _dataset(sim_root, "dynamic-traffic")


@pytest.fixture(scope="session")
def odometry_cache():
    from semloc.pipeline import OdometryCache

    return OdometryCache()


@pytest.fixture(scope="session")
def urban_baseline(urban_dataset, tmp_path_factory, odometry_cache):
    """Baseline pipeline on the urban block; the first run that fills the odometry cache."""
    from semloc.pipeline import PipelineConfig, run_pipeline

    out = tmp_path_factory.mktemp("urban-baseline")
    return run_pipeline(PipelineConfig(dataset=str(urban_dataset), output_dir=str(out), name="baseline"),
                        cache=odometry_cache)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LOG):
        title, ok, detail = ACCEPTANCE_LOG[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
