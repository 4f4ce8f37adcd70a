"""Deterministic synthetic world, sensor rig and dataset generator."""
from .dataset import BASE_STAMP_NS, GeneratedDataset, corrupt_labels, generate_dataset, vehicle_pose_at
from .scenarios import SCENARIOS, CurvePath, LinePath, Scenario, make_scenario
from .sensors import (
    VEHICLE_TO_OPTICAL,
    LidarModel,
    LidarScan,
    RigSpec,
    camera_world_pose,
    default_cameras,
    default_rig,
    fast_lidar,
    raycast_lidar,
    render_label_image,
)
from .world import GROUND_ID, MISS_ID, Box, Cylinder, GroundRegion, World, raycast, raycast_bruteforce

__all__ = [n for n in dir() if not n.startswith("_")]
