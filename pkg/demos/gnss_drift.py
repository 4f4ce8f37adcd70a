"""Inject 1 % scale drift into the odometry and show how 1 Hz GNSS pulls it back.

    python demos/gnss_drift.py /path/to/urban-block-dataset
"""
import sys

from semloc.evaluation import format_table
from semloc.pipeline import OdometryCache, PipelineConfig, run_pipeline


def main(dataset):
    cache = OdometryCache()
    rows = []
    for name, over in (("odometry", dict(gnss=False)), ("gnss", dict(gnss=True))):
        cfg = PipelineConfig(dataset=dataset, output_dir=f"gnss-drift/{name}", inject_drift=0.01,
                             loop_closures=False, **over)
        res = run_pipeline(cfg, cache=cache)  # the second run reuses the odometry of the first
        rows.append((name, res.report))
    print(format_table(rows))


if __name__ == "__main__":
    main(sys.argv[1])
