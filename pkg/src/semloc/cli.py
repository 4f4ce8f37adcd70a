"""Command line entry point: ``semloc simulate | run | eval | plot | default-config | rosbag-layout``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .core.errors import ConfigError, SemlocError
from .evaluation import DEFAULT_MAX_DT_NS, Trajectory, ate, export_plot, format_table, save_report_json
from .gnss import read_gnss_csv

log = logging.getLogger("semloc")

ROSBAG_LAYOUT = """\
Converting a recording to the dataset layout (no bag reader is bundled):

  <root>/lidar/<stamp_ns>.bin     float32 little-endian x, y, z, rel_time_s per point, sensor frame
  <root>/labels/<stamp_ns>.label  uint32 little-endian class id per point (optional, lidar-files labels)
  <root>/<camera>/<stamp_ns>.png  8-bit label image per camera, unified class ids (camera-projection labels)
  <root>/gnss.csv                 header "stamp_ns,x,y,z,sigma_m", local metric frame
  <root>/calib.json               cameras (intrinsics, distortion, vehicle->camera extrinsic, priority)
                                  and the lidar->vehicle extrinsic; see semloc.core.Calibration
  <root>/gt_tum.txt               optional reference trajectory, "stamp_s tx ty tz qx qy qz qw"

Stamps are integer nanoseconds taken from the message header of each sensor.
Geodetic fixes convert with semloc.gnss.geodetic_to_enu(lat, lon, alt, origin).
"""


def _lidar_model(text):
    from .sim import LidarModel, fast_lidar

    if text == "default":
        return LidarModel()
    if text == "fast":
        return fast_lidar()
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--lidar expects 'default', 'fast' or ROWSxCOLS, got {text!r}") from None
    return LidarModel(rows=rows, cols=cols)


def cmd_simulate(args):
    import dataclasses

    from .sim import default_rig, generate_dataset, make_scenario

    lidar = dataclasses.replace(_lidar_model(args.lidar), range_noise=args.range_noise)
    rig = default_rig(lidar, gnss_sigma=args.gnss_sigma, gnss_rate_hz=args.gnss_rate)
    scenario = make_scenario(args.scenario, args.seed)
    out = generate_dataset(scenario, rig, args.seed, args.out, frames=args.frames, rate_hz=args.rate,
                           cameras=not args.no_cameras, label_error_rate=args.label_error_rate,
                           gnss_noise=not args.noiseless_gnss)
    print(f"wrote {len(out.lidar_stamps)} frames of {args.scenario} to {out.root}")
    return 0


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            val = json.loads(value)
        except json.JSONDecodeError:
            val = value
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out


def _merge(base, over):
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def _config(args):
    from .pipeline import PipelineConfig

    doc = PipelineConfig().to_json()
    if args.config:
        try:
            _merge(doc, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
    if args.dataset:
        doc["dataset"] = args.dataset
    if args.out:
        doc["output_dir"] = args.out
    _merge(doc, _parse_set(args.set))
    cfg = PipelineConfig.from_json(doc)
    if not Path(cfg.dataset).is_dir():
        raise ConfigError(f"dataset directory {cfg.dataset} does not exist")
    return cfg


def cmd_run(args):
    from .pipeline import run_matrix, run_pipeline, variant_config

    cfg = _config(args)
    if args.matrix:
        results = run_matrix(cfg, args.variants or None)
        rows = [(n, r.report) for n, r in results if r.report is not None]
        if rows:
            print(format_table(rows))
            save_report_json(Path(cfg.output_dir) / "matrix.json", rows)
        return 0
    if args.variant:
        cfg = variant_config(cfg, args.variant)
    res = run_pipeline(cfg)
    if res.report is not None:
        print(format_table([(cfg.name, res.report)]))
    else:
        print(f"{cfg.name}: no reference trajectory in the dataset; wrote outputs to {cfg.output_dir}")
    return 0


def _load_reference(path):
    path = Path(path)
    if path.suffix == ".csv":
        fixes = read_gnss_csv(path)
        return Trajectory.from_positions([f.stamp for f in fixes], [f.position for f in fixes])
    return Trajectory.load_tum(path)


def cmd_eval(args):
    est = Trajectory.load_tum(args.estimate)
    ref = _load_reference(args.reference)
    res = ate(est, ref, int(args.max_dt_ms * 1e6), align=not args.no_align)
    print(format_table([(args.name, res.report)], args.digits))
    if args.json:
        save_report_json(args.json, [(args.name, res.report)])
    return 0


def cmd_plot(args):
    est = Trajectory.load_tum(args.estimate)
    ref = _load_reference(args.reference)
    res = ate(est, ref, int(args.max_dt_ms * 1e6), align=not args.no_align)
    export_plot(res.stamps, res.aligned, res.errors, args.svg, args.csv)
    print(f"wrote {args.svg}" + (f" and {args.csv}" if args.csv else ""))
    return 0


def cmd_default_config(args):
    from .pipeline import PipelineConfig

    print(json.dumps(PipelineConfig().to_json(), indent=1, sort_keys=True))
    return 0


def cmd_rosbag_layout(args):
    print(ROSBAG_LAYOUT, end="")
    return 0


def build_parser():
    from .pipeline import VARIANTS
    from .sim import SCENARIOS

    p = argparse.ArgumentParser(prog="semloc", description="Semantic LiDAR odometry, mapping and evaluation.")
    p.add_argument("--version", action="version", version=f"semloc {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--frames", type=int, default=200)
    s.add_argument("--rate", type=float, default=10.0, help="LiDAR rate in Hz")
    s.add_argument("--lidar", default="default", help="'default' (128x2048), 'fast' (32x1024) or ROWSxCOLS")
    s.add_argument("--range-noise", type=float, default=0.01, help="range noise sigma in meters")
    s.add_argument("--gnss-sigma", type=float, default=0.1, help="GNSS position sigma in meters")
    s.add_argument("--gnss-rate", type=float, default=1.0, help="GNSS rate in Hz")
    s.add_argument("--no-cameras", action="store_true", help="skip camera label images")
    s.add_argument("--label-error-rate", type=float, default=0.0, help="per-point label flip probability")
    s.add_argument("--noiseless-gnss", action="store_true", help="GNSS equals ground truth")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the pipeline on a dataset")
    r.add_argument("--config", help="JSON config file (see default-config)")
    r.add_argument("--dataset", help="dataset directory (overrides the config)")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, dotted keys for nested sections, JSON values")
    r.add_argument("--variant", choices=list(VARIANTS), help="apply one named table variant")
    r.add_argument("--matrix", action="store_true", help="run all table variants and print one table")
    r.add_argument("--variants", nargs="+", choices=list(VARIANTS), help="restrict --matrix to these")
    r.set_defaults(func=cmd_run)

    for name, func, helptext in (("eval", cmd_eval, "ATE of an estimated TUM trajectory"),
                                 ("plot", cmd_plot, "error-colored SVG and CSV of a trajectory")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("estimate", help="estimated trajectory (TUM)")
        e.add_argument("reference", help="reference trajectory (TUM) or GNSS CSV")
        e.add_argument("--max-dt-ms", type=float, default=DEFAULT_MAX_DT_NS / 1e6,
                       help="association window in milliseconds")
        e.add_argument("--no-align", action="store_true", help="skip rigid alignment")
        if name == "eval":
            e.add_argument("--name", default="estimate", help="row label")
            e.add_argument("--digits", type=int, default=3)
            e.add_argument("--json", help="also write the report as JSON")
        else:
            e.add_argument("--svg", required=True)
            e.add_argument("--csv")
        e.set_defaults(func=func)

    d = sub.add_parser("default-config", help="print the default run config as JSON")
    d.set_defaults(func=cmd_default_config)
    b = sub.add_parser("rosbag-layout", help="describe the dataset layout a recording must be converted to")
    b.set_defaults(func=cmd_rosbag_layout)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SemlocError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
