from .camera import DEPTH_MIN, Calibration, CameraModel, pose_from_list
from .cloud import PointCloud
from .errors import (
    ConfigError,
    DataError,
    DegenerateAlignmentError,
    NumericalError,
    SemlocError,
    SingularGraphError,
    UnknownClassError,
)
from .geometry import BranchCutWarning, Pose, compose, exp_se3, interpolate, log_se3, transform_point
from .taxonomy import (
    CLASS_NAMES,
    DEFAULT_GROUPS,
    GROUPS,
    NUM_CLASSES,
    VEHICLES,
    ClassGroups,
    RemapTable,
    UnifiedClass,
    cityscapes_table,
    identity_table,
    load_table,
    parse_classes,
    semantickitti_table,
)

NS_PER_S = 1_000_000_000


def format_stamp(ns: int) -> str:
    """Integer nanoseconds -> decimal seconds with 9 fractional digits, exactly."""
    ns = int(ns)
    if ns < 0:
        raise ValueError("timestamps are non-negative")
    return f"{ns // NS_PER_S}.{ns % NS_PER_S:09d}"


def parse_stamp(text: str) -> int:
    """Inverse of :func:`format_stamp`; accepts any number of fractional digits up to 9."""
    text = text.strip()
    whole, _, frac = text.partition(".")
    if not whole.isdigit() or (frac and not frac.isdigit()) or len(frac) > 9:
        raise ValueError(f"bad timestamp {text!r}")
    return int(whole) * NS_PER_S + int(frac.ljust(9, "0") or 0)
