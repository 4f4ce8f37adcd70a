"""End-to-end run: sync, labeling, odometry, pose graph, mapping, evaluation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .core import Pose, load_table
from .core.errors import ConfigError, DataError, NumericalError, SemlocError
from .dataset import Dataset
from .evaluation import DEFAULT_MAX_DT_NS, AteReport, Trajectory, ate, format_table
from .mapping import DEFAULT_MAP_VOXEL, build_map, export_ply, write_class_csv
from .odometry import Odometry, OdometryConfig, preprocess
from .posegraph import LoopParams, attach_gnss, chain_graph, detect_loops, select_keyframes
from .projection import fuse_cameras
from .semantics import FilterSpec, apply_filter, load_point_labels
from .sync import DEFAULT_SLOP_NS, match_lidar_cameras

log = logging.getLogger(__name__)

LABEL_SOURCES = ("none", "camera-projection", "lidar-files")


class StageError(SemlocError):
    """Wraps a failure with the pipeline stage and frame index; keeps the exit code of the cause."""

    def __init__(self, stage, frame, cause):
        self.stage, self.frame, self.cause = stage, frame, cause
        self.exit_code = getattr(cause, "exit_code", 1)
        where = f"stage '{stage}'" + (f", frame {frame}" if frame is not None else "")
        super().__init__(f"{where}: {cause}")


def _filter_from(d):
    if isinstance(d, FilterSpec):
        return d
    d = d or {}
    unknown = set(d) - {"drop", "keep_unlabeled"}
    if unknown:
        raise ConfigError(f"unknown filter options {sorted(unknown)}")
    return FilterSpec.from_names(d.get("drop", ()), d.get("keep_unlabeled", True))


@dataclass(frozen=True)
class GraphConfig:
    sigma_t: float = 0.05
    sigma_r_deg: float = 0.5
    max_iterations: int = 50
    keyframe_distance: float = 2.0
    keyframe_angle_deg: float = 10.0
    gnss_max_dt_ns: int = DEFAULT_MAX_DT_NS
    lever_arm: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PipelineConfig:
    """One run of the pipeline. Every field round-trips through JSON."""

    dataset: str = "."
    output_dir: str = "out"
    name: str = "run"
    label_source: str = "none"
    label_taxonomy: str = "semantickitti"
    registration_filter: FilterSpec = field(default_factory=FilterSpec)
    mapping_filter: FilterSpec = field(default_factory=FilterSpec)
    semantic_gate: str = "off"
    gnss: bool = False
    loop_closures: bool = True
    sync_slop_ns: int = DEFAULT_SLOP_NS
    zbuffer: bool = False
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    loops: LoopParams = field(default_factory=LoopParams)
    graph: GraphConfig = field(default_factory=GraphConfig)
    map_voxel: float = DEFAULT_MAP_VOXEL
    write_map: bool = True
    inject_drift: float = 0.0  # extra forward scale on every odometry step, e.g. 0.01 = 1 % of distance
    max_frames: int = 0  # 0 = all
    seed: int = 0

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"label_source must be one of {LABEL_SOURCES}, got {self.label_source!r}")
        for name in ("registration_filter", "mapping_filter"):
            object.__setattr__(self, name, _filter_from(getattr(self, name)))
        if isinstance(self.odometry, dict):
            object.__setattr__(self, "odometry", OdometryConfig.from_json(self.odometry))
        if isinstance(self.loops, dict):
            object.__setattr__(self, "loops", _dataclass_from(LoopParams, self.loops, "loops"))
        if isinstance(self.graph, dict):
            object.__setattr__(self, "graph", _dataclass_from(GraphConfig, self.graph, "graph"))
        if self.semantic_gate != "off" and self.label_source == "none":
            raise ConfigError("a semantic gate needs a label source")
        if self.sync_slop_ns < 0 or self.map_voxel <= 0 or self.max_frames < 0:
            raise ConfigError("sync_slop_ns, map_voxel and max_frames must be non-negative (voxel positive)")

    @property
    def semantic(self):
        return self.label_source != "none"

    def odometry_config(self) -> OdometryConfig:
        return dataclasses.replace(self.odometry, semantic_gate=self.semantic_gate, semantics_enabled=self.semantic)

    def to_json(self):
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (FilterSpec, OdometryConfig)):
                v = v.to_json()
            elif dataclasses.is_dataclass(v):
                v = dataclasses.asdict(v)
                v = {k: list(x) if isinstance(x, tuple) else x for k, x in v.items()}
            d[f.name] = v
        return d

    @classmethod
    def from_json(cls, d):
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None

    def with_overrides(self, **kw):
        return PipelineConfig.from_json({**self.to_json(), **kw})

    def digest(self):
        """Hash of everything that influences results (output location excluded)."""
        d = self.to_json()
        d.pop("output_dir")
        d.pop("name")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _dataclass_from(cls, d, what):
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} options {sorted(unknown)}")
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**d)


# --- variants ------------------------------------------------------------------------------------

_GROUND_AND_DYNAMIC = {"drop": ["dynamic", "ground"]}
_DYNAMIC = {"drop": ["dynamic"]}

# name -> overrides; ordered like the result tables (odometry-only stands in for the external reference system)
VARIANTS = {
    "Odometry-Only": dict(label_source="none", loop_closures=False, gnss=False),
    "Baseline": dict(label_source="none"),
    "Camera-Non-Ground": dict(label_source="camera-projection", semantic_gate="hard",
                              registration_filter=_GROUND_AND_DYNAMIC, mapping_filter=_GROUND_AND_DYNAMIC),
    "Camera-With-Ground": dict(label_source="camera-projection", semantic_gate="hard",
                               registration_filter=_DYNAMIC, mapping_filter=_DYNAMIC),
    "LiDAR-Non-Ground": dict(label_source="lidar-files", semantic_gate="hard",
                             registration_filter=_GROUND_AND_DYNAMIC, mapping_filter=_GROUND_AND_DYNAMIC),
    "LiDAR-With-Ground": dict(label_source="lidar-files", semantic_gate="hard",
                              registration_filter=_DYNAMIC, mapping_filter=_DYNAMIC),
    "Baseline-With-GNSS": dict(label_source="none", gnss=True),
    "Camera-With-GNSS": dict(label_source="camera-projection", semantic_gate="hard", gnss=True,
                             registration_filter=_DYNAMIC, mapping_filter=_DYNAMIC),
    "LiDAR-With-GNSS": dict(label_source="lidar-files", semantic_gate="hard", gnss=True,
                            registration_filter=_DYNAMIC, mapping_filter=_DYNAMIC),
}


def variant_config(base: PipelineConfig, name: str) -> PipelineConfig:
    try:
        over = VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {list(VARIANTS)}") from None
    defaults = PipelineConfig()
    keep = {k: v for k, v in base.to_json().items()
            if k in ("dataset", "output_dir", "sync_slop_ns", "zbuffer", "odometry", "loops", "graph", "map_voxel",
                     "write_map", "inject_drift", "max_frames", "seed", "label_taxonomy")}
    reset = {k: getattr(defaults, k) for k in ("registration_filter", "mapping_filter")}
    reset = {k: v.to_json() for k, v in reset.items()}
    slug = name.lower()
    return PipelineConfig.from_json({**keep, **reset, "name": slug, "semantic_gate": "off", **over,
                                     "output_dir": str(Path(base.output_dir) / slug)})


# --- run ---------------------------------------------------------------------------------------

@dataclass
class RunResult:
    config: PipelineConfig
    trajectory: Trajectory
    odometry_trajectory: Trajectory
    report: AteReport | None
    odometry_report: AteReport | None
    timings: dict
    loops: int = 0
    gnss_factors: int = 0
    map_voxels: int = 0
    degenerate_frames: tuple = ()
    manifest: dict = field(default_factory=dict)


class _Stage:
    def __init__(self, timings, name):
        self.timings, self.name, self.frame = timings, name, None

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, et, e, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if e is None or isinstance(e, StageError):
            return False
        if isinstance(e, SemlocError):
            raise StageError(self.name, self.frame, e) from e
        if isinstance(e, (np.linalg.LinAlgError, FloatingPointError)):
            raise StageError(self.name, self.frame, NumericalError(str(e))) from e
        return False


def apply_drift(poses, drift):
    """Re-chain ``poses`` with every relative translation scaled by ``1 + drift``."""
    if drift == 0 or not poses:
        return list(poses)
    out = [poses[0]]
    for a, b in zip(poses[:-1], poses[1:]):
        d = a.inverse() @ b
        out.append(out[-1] @ Pose(d.rotation, d.translation * (1.0 + drift)))
    return out


def _label_frame(cfg, ds, stamp, cloud, matches, table):
    if cfg.label_source == "lidar-files":
        return load_point_labels(ds.label_path(stamp), cloud, table)
    if cfg.label_source == "camera-projection":
        cams = matches.get(stamp)
        if cams is None:
            log.info("scan %d has no synchronized camera tuple; left unlabeled", stamp)
            return cloud.with_labels(np.zeros(len(cloud), np.uint8))
        images = {name: ds.image(name, cs) for name, cs in cams.items()}
        return fuse_cameras(cloud, ds.calibration.cameras, images, cfg.zbuffer)[0]
    return cloud


def odometry_key(cfg: PipelineConfig) -> str:
    """Hash of everything the odometry stage depends on; runs with equal keys share odometry."""
    d = {"dataset": str(Path(cfg.dataset).resolve()), "max_frames": cfg.max_frames,
         "label_source": cfg.label_source, "odometry": cfg.odometry_config().to_json()}
    if cfg.label_source == "lidar-files":
        d["label_taxonomy"] = cfg.label_taxonomy
    if cfg.label_source == "camera-projection":
        d.update(sync_slop_ns=cfg.sync_slop_ns, zbuffer=cfg.zbuffer)
    if cfg.semantic:
        d.update(registration_filter=cfg.registration_filter.to_json(), mapping_filter=cfg.mapping_filter.to_json())
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class OdometryCache:
    """Holds the labeled clouds and odometry of the most recent run so variants that differ
    only downstream (drift injection, GNSS, loop closures, mapping) skip the expensive part."""

    key: str | None = None
    value: tuple | None = None
    hits: int = 0


def _odometry_stage(cfg, ds, stamps, ext, table, timings):
    with _Stage(timings, "sync"):
        matches = {}
        if cfg.label_source == "camera-projection":
            cam_stamps = {c.name: ds.camera_stamps(c.name) for c in ds.calibration.cameras}
            if not any(cam_stamps.values()):
                raise StageError("sync", None, DataError(f"{ds.root}: no camera images for camera-projection"))
            matches = match_lidar_cameras(stamps, cam_stamps, cfg.sync_slop_ns)

    odo = Odometry(cfg.odometry_config(), cfg.registration_filter, cfg.mapping_filter)
    clouds = []
    label_stage, odo_stage = _Stage(timings, "labeling"), _Stage(timings, "odometry")
    for k, stamp in enumerate(stamps):
        label_stage.frame = odo_stage.frame = k
        with label_stage:
            cloud = ds.cloud(stamp).transformed(ext)
            if cfg.semantic:
                cloud = _label_frame(cfg, ds, stamp, cloud, matches, table)
        with odo_stage:
            odo.process_frame(cloud)
        clouds.append(cloud)
    degenerate = tuple(r.index for r in odo.results if r.degenerate)
    return list(odo.poses), list(odo.stamps), clouds, degenerate


def run_pipeline(cfg: PipelineConfig, write=True, cache: OdometryCache | None = None) -> RunResult:
    """Execute one configuration; writes outputs under ``cfg.output_dir`` when ``write``.

    Pass an :class:`OdometryCache` to reuse the odometry of a previous run with the same
    :func:`odometry_key`; results are identical to a fresh run.
    """
    timings = {}
    t_start = time.perf_counter()
    with _Stage(timings, "load"):
        ds = Dataset(cfg.dataset)
        stamps = ds.lidar_stamps
        if cfg.max_frames:
            stamps = stamps[:cfg.max_frames]
        ext = ds.calibration.lidar_extrinsic
        table = load_table(cfg.label_taxonomy) if cfg.label_source == "lidar-files" else None

    key = odometry_key(cfg) if cache is not None else None
    if cache is not None and cache.key == key:
        cache.hits += 1
        raw_poses, raw_stamps, clouds, degenerate = cache.value
    else:
        raw_poses, raw_stamps, clouds, degenerate = _odometry_stage(cfg, ds, stamps, ext, table, timings)
        if cache is not None:
            cache.key, cache.value = key, (raw_poses, raw_stamps, clouds, degenerate)
    ocfg = cfg.odometry_config()

    odo_poses = apply_drift(raw_poses, cfg.inject_drift)
    odo_traj = Trajectory(list(raw_stamps), odo_poses)
    poses = odo_poses
    n_loops = n_gnss = 0
    if cfg.gnss or cfg.loop_closures:
        with _Stage(timings, "posegraph"):
            g = cfg.graph
            keys = select_keyframes(odo_poses, g.keyframe_distance, g.keyframe_angle_deg)
            kc = [None] * len(odo_poses)
            if cfg.loop_closures:
                for i in keys:
                    kc[i] = preprocess(clouds[i], ocfg)
                    if cfg.semantic:
                        kc[i] = apply_filter(kc[i], cfg.registration_filter)
            graph = chain_graph(odo_traj.stamps, odo_poses, g.sigma_t, g.sigma_r_deg, kc)
            if cfg.gnss:
                n_gnss = attach_gnss(graph, ds.gnss(), g.gnss_max_dt_ns, g.lever_arm)
                if not n_gnss:
                    raise DataError("GNSS fusion requested but no fix lies within the association window")
            if cfg.loop_closures:
                edges = detect_loops(graph.nodes, cfg.loops, ocfg, keys)
                for e in edges:
                    graph.add_edge(e)
                n_loops = len(edges)
            if n_loops or n_gnss:
                graph.optimize(g.max_iterations)
            poses = graph.poses
    traj = Trajectory(odo_traj.stamps, poses)

    n_voxels = 0
    semmap = None
    if cfg.write_map:
        with _Stage(timings, "mapping"):
            semmap = build_map(poses, clouds, cfg.mapping_filter if cfg.semantic else FilterSpec(), cfg.map_voxel)
            n_voxels = len(semmap)

    report = odo_report = None
    with _Stage(timings, "eval"):
        gt = ds.ground_truth()
        ate_res = None
        if gt is not None:
            ate_res = ate(traj, gt)
            report = ate_res.report
            odo_report = ate(odo_traj, gt).report
    timings["total"] = time.perf_counter() - t_start

    manifest = {
        "name": cfg.name,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "dataset": str(Path(cfg.dataset).resolve()),
        "dataset_meta": ds.meta(),
        "versions": {"semloc": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "frames": len(stamps),
    }
    result = RunResult(cfg, traj, odo_traj, report, odo_report, timings, n_loops, n_gnss, n_voxels,
                       degenerate, manifest)
    if write:
        with _Stage(timings, "write"):
            _write_outputs(cfg, result, semmap, ate_res)
    return result


def _write_outputs(cfg, result, semmap, ate_res):
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from None
    result.trajectory.save_tum(out / "trajectory_tum.txt")
    result.odometry_trajectory.save_tum(out / "odometry_tum.txt")
    if semmap is not None:
        export_ply(semmap, out / "map.ply")
        write_class_csv(semmap, out / "map_classes.csv")
    report = {
        "name": cfg.name,
        "ate": result.report.to_json() if result.report else None,
        "odometry_ate": result.odometry_report.to_json() if result.odometry_report else None,
        "loops": result.loops,
        "gnss_factors": result.gnss_factors,
        "map_voxels": result.map_voxels,
        "degenerate_frames": list(result.degenerate_frames),
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if result.report:
        (out / "report.txt").write_text(format_table([(cfg.name, result.report)]) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True) + "\n")
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=1, sort_keys=True) + "\n")
    # timings vary between runs, keep them out of the report so reruns compare equal
    (out / "timings.json").write_text(json.dumps(result.timings, indent=1, sort_keys=True) + "\n")


def run_matrix(base: PipelineConfig, variants=None, write=True):
    """Run every variant on the same dataset; returns ``[(name, RunResult)]``."""
    names = list(VARIANTS) if variants is None else list(variants)
    cfgs = {name: variant_config(base, name) for name in names}
    # run variants that share odometry back to back so the single-entry cache hits
    order = sorted(names, key=lambda n: [odometry_key(cfgs[m]) for m in names].index(odometry_key(cfgs[n])))
    cache = OdometryCache()
    results = {}
    for name in order:
        log.info("variant %s", name)
        results[name] = run_pipeline(cfgs[name], write, cache)
    out = [(name, results[name]) for name in names]
    if write:
        rows = [(n, r.report) for n, r in out if r.report is not None]
        if rows:
            Path(base.output_dir).mkdir(parents=True, exist_ok=True)
            (Path(base.output_dir) / "matrix.txt").write_text(format_table(rows) + "\n")
    return out


__all__ = ["PipelineConfig", "GraphConfig", "RunResult", "StageError", "VARIANTS", "variant_config", "run_pipeline",
           "run_matrix", "apply_drift", "LABEL_SOURCES", "OdometryCache", "odometry_key"]
