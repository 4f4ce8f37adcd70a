"""Trajectory association, rigid alignment, ATE statistics and error-colored plots."""
from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import NS_PER_S, Pose, format_stamp, parse_stamp
from .core.errors import DataError, DegenerateAlignmentError

DEFAULT_MAX_DT_NS = 50_000_000
ATE_FIELDS = ("max", "mean", "min", "rmse", "std")


class Trajectory:
    """Stamped poses with strictly increasing integer-nanosecond stamps."""

    def __init__(self, stamps, poses):
        stamps = [int(s) for s in stamps]
        poses = list(poses)
        if len(stamps) != len(poses):
            raise DataError(f"{len(stamps)} stamps for {len(poses)} poses")
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise DataError("trajectory stamps must be strictly increasing")
        self.stamps = stamps
        self.poses = poses

    def __len__(self):
        return len(self.stamps)

    def __iter__(self):
        return iter(zip(self.stamps, self.poses))

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses], dtype=float).reshape(-1, 3)

    def transformed(self, g: Pose) -> "Trajectory":
        return Trajectory(self.stamps, [g @ p for p in self.poses])

    def path_length(self) -> float:
        p = self.positions
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0

    def save_tum(self, path):
        """Write "stamp tx ty tz qx qy qz qw" lines; stamps keep all 9 fractional digits."""
        with open(path, "w") as f:
            for s, p in self:
                vals = " ".join(repr(float(v)) for v in p.xyz_quat())
                f.write(f"{format_stamp(s)} {vals}\n")

    @classmethod
    def load_tum(cls, path) -> "Trajectory":
        stamps, poses = [], []
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as e:
            raise DataError(f"cannot read trajectory {path}: {e}") from None
        for no, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataError(f"{path}:{no}: expected 8 fields, got {len(parts)}")
            try:
                stamp = parse_stamp(parts[0])
                vals = [float(x) for x in parts[1:]]
            except ValueError as e:
                raise DataError(f"{path}:{no}: {e}") from None
            if not all(math.isfinite(v) for v in vals) or np.linalg.norm(vals[3:]) < 1e-12:
                raise DataError(f"{path}:{no}: invalid pose values")
            if stamps and stamp <= stamps[-1]:
                raise DataError(f"{path}:{no}: stamp not strictly increasing")
            stamps.append(stamp)
            poses.append(Pose.from_xyz_quat(vals[:3], vals[3:]))
        if not stamps:
            raise DataError(f"{path}: empty trajectory")
        return cls(stamps, poses)

    @classmethod
    def from_positions(cls, stamps, positions) -> "Trajectory":
        return cls(stamps, [Pose.from_translation(p) for p in np.asarray(positions, float)])


@dataclass(frozen=True)
class Association:
    est_idx: np.ndarray
    ref_idx: np.ndarray
    dt_ns: np.ndarray  # est stamp - ref stamp

    def __len__(self):
        return len(self.est_idx)


def associate(est: Trajectory, ref: Trajectory, max_dt_ns: int = DEFAULT_MAX_DT_NS) -> Association:
    """Pair each est sample with its nearest unused ref sample, greedily in est order."""
    if not len(est) or not len(ref):
        raise DataError("cannot associate an empty trajectory")
    rs = ref.stamps
    used = set()
    ei, ri, dts = [], [], []
    for i, s in enumerate(est.stamps):
        k = bisect.bisect_left(rs, s)
        lo, hi = k - 1, k
        best = None
        # walk outward from the insertion point until the nearest unused ref is found
        while lo >= 0 or hi < len(rs):
            dlo = s - rs[lo] if lo >= 0 else None
            dhi = rs[hi] - s if hi < len(rs) else None
            if dhi is None or (dlo is not None and dlo <= dhi):
                j, d = lo, dlo
                lo -= 1
            else:
                j, d = hi, dhi
                hi += 1
            if d > max_dt_ns:
                break
            if j not in used:
                best = j
                break
        if best is not None:
            used.add(best)
            ei.append(i)
            ri.append(best)
            dts.append(s - rs[best])
    if not ei:
        raise DataError(f"no samples associated within {max_dt_ns} ns")
    return Association(np.array(ei), np.array(ri), np.array(dts, dtype=np.int64))


def umeyama_align(src, dst) -> Pose:
    """Rigid T (scale 1) minimizing sum |T src_i - dst_i|^2."""
    src = np.asarray(src, float).reshape(-1, 3)
    dst = np.asarray(dst, float).reshape(-1, 3)
    if len(src) != len(dst):
        raise DataError("point sets differ in length")
    if len(src) < 3:
        raise DegenerateAlignmentError(f"need at least 3 point pairs, got {len(src)}")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    a, b = src - mu_s, dst - mu_d
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateAlignmentError("point configuration is collinear; rotation about its axis is undetermined")
    U, _, Vt = np.linalg.svd(b.T @ a)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = mu_d - R @ mu_s
    return Pose.from_matrix(T)


@dataclass(frozen=True)
class AteReport:
    max: float
    mean: float
    min: float
    rmse: float
    std: float
    count: int
    alignment: Pose = field(default_factory=Pose.identity)

    @classmethod
    def from_errors(cls, errors, alignment=None) -> "AteReport":
        e = np.asarray(errors, float)
        if e.size == 0:
            raise DataError("no errors to summarize")
        lo, hi = float(e.min()), float(e.max())
        mean = min(max(float(e.mean()), lo), hi)  # summation rounding can land one ulp outside [min, max]
        return cls(hi, mean, lo, float(np.sqrt(np.mean(e * e))), float(np.std(e)), int(e.size),
                   alignment or Pose.identity())

    def values(self):
        return tuple(getattr(self, f) for f in ATE_FIELDS)

    def to_json(self):
        d = {f: getattr(self, f) for f in ATE_FIELDS}
        d["count"] = self.count
        d["alignment"] = [float(v) for v in self.alignment.xyz_quat()]
        return d

    @classmethod
    def from_json(cls, d):
        return cls(*(float(d[f]) for f in ATE_FIELDS), int(d["count"]), Pose.from_xyz_quat(d["alignment"][:3],
                                                                                           d["alignment"][3:]))


@dataclass
class AteResult:
    report: AteReport
    errors: np.ndarray
    stamps: list
    aligned: np.ndarray  # aligned est positions, one per pair
    association: Association


def ate(est: Trajectory, ref: Trajectory, max_dt_ns: int = DEFAULT_MAX_DT_NS, align=True) -> AteResult:
    pairs = associate(est, ref, max_dt_ns)
    p_est = est.positions[pairs.est_idx]
    p_ref = ref.positions[pairs.ref_idx]
    g = umeyama_align(p_est, p_ref) if align else Pose.identity()
    aligned = g.transform_points(p_est)
    err = np.linalg.norm(aligned - p_ref, axis=1)
    stamps = [est.stamps[i] for i in pairs.est_idx]
    return AteResult(AteReport.from_errors(err, g), err, stamps, aligned, pairs)


def format_table(rows, digits=3) -> str:
    """Text table with one row per (name, AteReport); columns max mean min rmse std."""
    rows = list(rows)
    width = max([len("variant")] + [len(n) for n, _ in rows])
    head = f"{'variant':<{width}} " + " ".join(f"{c:>{digits + 5}}" for c in ATE_FIELDS)
    lines = [head]
    for name, rep in rows:
        lines.append(f"{name:<{width}} " + " ".join(f"{v:>{digits + 5}.{digits}f}" for v in rep.values()))
    return "\n".join(lines)


def save_report_json(path, rows, extra=None):
    doc = {"columns": list(ATE_FIELDS), "rows": {n: r.to_json() for n, r in rows}}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def _color(frac):
    """Linear blue (0) -> red (1)."""
    frac = min(max(frac, 0.0), 1.0)
    return f"#{int(round(255 * frac)):02x}00{int(round(255 * (1 - frac))):02x}"


def export_plot(stamps, positions, errors, svg_path, csv_path=None, size=800, margin=20):
    """Top-down SVG polyline colored by per-segment error, plus "stamp_ns,x,y,z,error_m" CSV."""
    positions = np.asarray(positions, float).reshape(-1, 3)
    errors = np.asarray(errors, float)
    if not (len(stamps) == len(positions) == len(errors)):
        raise DataError("stamps, positions and errors differ in length")
    xy = positions[:, :2]
    lo = xy.min(0) if len(xy) else np.zeros(2)
    span = float(max(np.ptp(xy, axis=0).max() if len(xy) else 0.0, 1e-9))
    scale = (size - 2 * margin) / span
    px = margin + (xy[:, 0] - lo[0]) * scale
    py = size - margin - (xy[:, 1] - lo[1]) * scale  # y up
    emin = float(errors.min()) if len(errors) else 0.0
    emax = float(errors.max()) if len(errors) else 0.0
    rng = emax - emin
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
           f'<desc>error range {emin:.6f} .. {emax:.6f} m</desc>']
    for k in range(len(xy) - 1):
        e = 0.5 * (errors[k] + errors[k + 1])
        c = _color((e - emin) / rng if rng > 0 else 0.0)
        out.append(f'<line x1="{px[k]:.2f}" y1="{py[k]:.2f}" x2="{px[k + 1]:.2f}" y2="{py[k + 1]:.2f}" '
                   f'stroke="{c}" stroke-width="2"/>')
    out.append("</svg>")
    Path(svg_path).write_text("\n".join(out) + "\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["stamp_ns", "x", "y", "z", "error_m"])
            for s, p, e in zip(stamps, positions, errors):
                w.writerow([int(s), repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(e))])


def read_plot_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    stamps = [int(r["stamp_ns"]) for r in rows]
    pos = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
    err = np.array([float(r["error_m"]) for r in rows])
    return stamps, pos, err


def stamp_seconds(ns) -> float:
    return ns / NS_PER_S
