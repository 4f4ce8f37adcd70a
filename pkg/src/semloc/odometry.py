"""Frame-to-local-map ICP odometry with semantic gating.

Point-to-point residuals, a Cauchy robust kernel, an adaptive correspondence
threshold driven by the constant-velocity model error, and a voxel hash map
that keeps the class of every stored point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import numba

from .core import Pose, UnifiedClass, parse_classes
from .core.errors import ConfigError
from .core.geometry import se3_exp_matrix, skew
from .semantics import FilterSpec, apply_filter

GATE_MODES = ("off", "hard", "soft")

_KEY_BITS = 21
_KEY_OFF = 1 << (_KEY_BITS - 1)


def voxel_keys(points, voxel):
    """Pack ``floor(p / voxel)`` into one int64 per point (±2^20 voxels per axis)."""
    idx = np.floor(np.asarray(points, float) / voxel).astype(np.int64) + _KEY_OFF
    if idx.size and (idx.min() < 0 or idx.max() >= (1 << _KEY_BITS)):
        raise ConfigError("point coordinates exceed the voxel key range")
    return (idx[:, 0] << (2 * _KEY_BITS)) | (idx[:, 1] << _KEY_BITS) | idx[:, 2]


def key_to_index(keys):
    keys = np.asarray(keys, np.int64)
    m = (1 << _KEY_BITS) - 1
    return np.stack([(keys >> (2 * _KEY_BITS)) & m, (keys >> _KEY_BITS) & m, keys & m], axis=1) - _KEY_OFF


@dataclass(frozen=True)
class OdometryConfig:
    voxel_downsample: float = 0.5
    map_voxel: float = 1.0
    max_points_per_voxel: int = 20
    max_range: float = 100.0
    min_range: float = 3.0
    max_iterations: int = 50
    convergence_eps: float = 1e-4
    semantic_gate: str = "off"
    soft_weight: float = 0.1
    gate_ignore: frozenset = frozenset()
    tau_min: float = 0.3
    tau_alpha: float = 1.0
    initial_threshold: float = 2.0
    min_motion: float = 0.1
    deskew: bool = False
    scan_period_s: float = 0.1
    semantics_enabled: bool = True

    def __post_init__(self):
        for name in ("voxel_downsample", "map_voxel", "max_range", "convergence_eps", "tau_min", "tau_alpha",
                     "initial_threshold", "scan_period_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"odometry {name} must be > 0")
        if self.min_range < 0 or self.min_range >= self.max_range:
            raise ConfigError("odometry needs 0 <= min_range < max_range")
        if self.max_points_per_voxel < 1 or self.max_iterations < 1:
            raise ConfigError("max_points_per_voxel and max_iterations must be >= 1")
        if self.semantic_gate not in GATE_MODES:
            raise ConfigError(f"semantic_gate must be one of {GATE_MODES}, got {self.semantic_gate!r}")
        if not 0.0 < self.soft_weight < 1.0:
            raise ConfigError("soft gate weight must lie in (0, 1)")
        object.__setattr__(self, "gate_ignore", parse_classes(self.gate_ignore))

    def to_json(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["gate_ignore"] = sorted(c.label for c in self.gate_ignore)
        return d

    @classmethod
    def from_json(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown odometry options {sorted(unknown)}")
        return cls(**d)


class VoxelHashMap:
    """Sparse voxel store: up to ``max_points`` (position, class) entries per voxel, first-wins."""

    def __init__(self, voxel=1.0, max_points=20):
        if voxel <= 0 or max_points < 1:
            raise ConfigError("voxel size and max points must be positive")
        self.voxel = float(voxel)
        self.max_points = int(max_points)
        self.points = np.zeros((0, 3))
        self.labels = np.zeros(0, np.uint8)
        self.keys = np.zeros(0, np.int64)
        self._tree = None

    def __len__(self):
        return len(self.points)

    @property
    def empty(self):
        return len(self.points) == 0

    def voxel_counts(self):
        _, counts = np.unique(self.keys, return_counts=True)
        return counts

    @property
    def n_voxels(self):
        return len(np.unique(self.keys))

    def insert(self, points, labels=None):
        """Add points in order; a point landing in a full voxel is dropped."""
        points = np.asarray(points, float).reshape(-1, 3)
        if not len(points):
            return 0
        labels = np.zeros(len(points), np.uint8) if labels is None else np.asarray(labels, np.uint8)
        keys = voxel_keys(points, self.voxel)
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sk)) + 1]
        group = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(sk)]))
        rank = np.empty(len(sk), np.int64)
        rank[order] = np.arange(len(sk)) - starts[group]
        if len(self.keys):
            uk, uc = np.unique(self.keys, return_counts=True)
            pos = np.clip(np.searchsorted(uk, keys), 0, len(uk) - 1)
            existing = np.where(uk[pos] == keys, uc[pos], 0)
        else:
            existing = np.zeros(len(keys), np.int64)
        ok = existing + rank < self.max_points
        self.points = np.concatenate([self.points, points[ok]])
        self.labels = np.concatenate([self.labels, labels[ok]])
        self.keys = np.concatenate([self.keys, keys[ok]])
        self._tree = None
        return int(ok.sum())

    def evict(self, center, max_distance):
        """Drop every voxel whose center lies farther than ``max_distance`` from ``center``."""
        if not len(self.keys):
            return 0
        centers = (key_to_index(self.keys) + 0.5) * self.voxel
        keep = np.linalg.norm(centers - np.asarray(center, float), axis=1) <= max_distance
        n = int((~keep).sum())
        if n:
            self.points, self.labels, self.keys = self.points[keep], self.labels[keep], self.keys[keep]
            self._tree = None
        return n

    def _index(self):
        if self._tree is None:
            order = np.argsort(self.keys, kind="stable")
            sk = self.keys[order]
            starts = np.r_[0, np.flatnonzero(np.diff(sk)) + 1, len(sk)]
            uk = np.ascontiguousarray(key_to_index(sk[starts[:-1]]))
            mask = (1 << int(np.ceil(np.log2(2 * len(uk) + 1)))) - 1
            self._tree = (order, np.ascontiguousarray(self.points[order]), starts.astype(np.int64), uk,
                          _build_table(uk, mask), mask)
        return self._tree

    def nearest(self, query, radius):
        """Nearest stored point within ``radius`` among the 27 voxels around each query point.

        Returns (distance, index) with distance = inf and index = -1 when none.
        Ties go to the point stored first within its voxel.
        """
        query = np.ascontiguousarray(query, dtype=float).reshape(-1, 3)
        if self.empty:
            return np.full(len(query), np.inf), np.full(len(query), -1)
        order, pts, starts, uk, table, mask = self._index()
        d, i = _nearest_kernel(query, pts, starts, uk, table, mask, self.voxel, float(radius))
        return d, np.where(i >= 0, order[np.maximum(i, 0)], -1)


@numba.njit(cache=True)
def _hash(ix, iy, iz, mask):
    return ((ix * 73856093) ^ (iy * 19349669) ^ (iz * 83492791)) & mask


@numba.njit(cache=True)
def _build_table(keys3, mask):
    table = np.full(mask + 1, -1, np.int64)
    for v in range(keys3.shape[0]):
        h = _hash(keys3[v, 0], keys3[v, 1], keys3[v, 2], mask)
        while table[h] != -1:
            h = (h + 1) & mask
        table[h] = v
    return table


@numba.njit(cache=True)
def _nearest_kernel(query, pts, starts, keys3, table, mask, voxel, radius):
    n = query.shape[0]
    dist = np.full(n, np.inf)
    idx = np.full(n, -1, np.int64)
    for q in range(n):
        x = query[q, 0]
        y = query[q, 1]
        z = query[q, 2]
        fx = x / voxel
        fy = y / voxel
        fz = z / voxel
        cx = int(np.floor(fx))
        cy = int(np.floor(fy))
        cz = int(np.floor(fz))
        ox = (fx - cx) * voxel
        oy = (fy - cy) * voxel
        oz = (fz - cz) * voxel
        best = radius * radius
        bi = -1
        for o in range(27):
            # offsets ordered so the home voxel comes first
            dx = (o // 9 + 1) % 3 - 1
            dy = ((o // 3) % 3 + 1) % 3 - 1
            dz = (o % 3 + 1) % 3 - 1
            gx = ox if dx < 0 else (voxel - ox if dx > 0 else 0.0)
            gy = oy if dy < 0 else (voxel - oy if dy > 0 else 0.0)
            gz = oz if dz < 0 else (voxel - oz if dz > 0 else 0.0)
            if gx * gx + gy * gy + gz * gz > best:
                continue
            ix = cx + dx
            iy = cy + dy
            iz = cz + dz
            h = _hash(ix, iy, iz, mask)
            while True:
                v = table[h]
                if v == -1:
                    break
                if keys3[v, 0] == ix and keys3[v, 1] == iy and keys3[v, 2] == iz:
                    for k in range(starts[v], starts[v + 1]):
                        ax = pts[k, 0] - x
                        ay = pts[k, 1] - y
                        az = pts[k, 2] - z
                        d = ax * ax + ay * ay + az * az
                        if d < best or (d == best and (bi < 0 or k < bi)):
                            best = d
                            bi = k
                    break
                h = (h + 1) & mask
        if bi >= 0:
            dist[q] = np.sqrt(best)
            idx[q] = bi
    return dist, idx


def preprocess(cloud, cfg: OdometryConfig):
    """Range crop to [min_range, max_range], then keep the first point of each downsample voxel."""
    r = np.linalg.norm(cloud.points, axis=1)
    cloud = cloud.subset((r >= cfg.min_range) & (r <= cfg.max_range))
    if not len(cloud):
        return cloud
    _, first = np.unique(voxel_keys(cloud.points, cfg.voxel_downsample), return_index=True)
    return cloud.subset(np.sort(first))


def predict(prev_deltas) -> Pose:
    """Constant-velocity model: the most recent frame-to-frame delta."""
    return prev_deltas[-1] if len(prev_deltas) else Pose.identity()


def deskew(cloud, delta: Pose, period_s: float):
    """Move each point into the scan-start frame, assuming ``delta`` spreads uniformly over the sweep."""
    from .core.geometry import log_se3

    if not len(cloud) or cloud.rel_time is None:
        return cloud
    xi = log_se3(delta)
    frac = cloud.rel_time.astype(float) * 1e-9 / period_s
    out = np.empty_like(cloud.points)
    for k in np.unique(frac):
        sel = frac == k
        T = se3_exp_matrix(k * xi)
        out[sel] = cloud.points[sel] @ T[:3, :3].T + T[:3, 3]
    return replace(cloud, points=out)


@dataclass(frozen=True)
class RegistrationResult:
    pose: Pose  # estimated source -> map transform
    delta: Pose  # correction relative to the initial guess: pose = delta @ init
    iterations: int
    mean_residual: float
    correspondences: int
    rejected_semantic: int
    fitness: float  # truncated mean residual: unmatched points count as tau
    degenerate: bool = False
    cost_history: tuple = ()


def _compat(src_lab, map_lab, ignore):
    """Class compatibility: exact equality, unlabeled matches everything, ignored classes never match."""
    ok = (src_lab == map_lab) | (src_lab == 0) | (map_lab == 0)
    if ignore is not None:
        ok &= ~ignore[src_lab] & ~ignore[map_lab]
    return ok


def _cauchy_rho(r, tau):
    return 0.5 * tau * tau * np.log1p((r / tau) ** 2)


class _Matcher:
    """Correspondences and robust cost for a fixed source, map and threshold."""

    def __init__(self, src_pts, src_lab, vmap: VoxelHashMap, tau, cfg: OdometryConfig):
        self.src = src_pts
        self.src_lab = src_lab
        self.map = vmap
        self.tau = tau
        self.gate = cfg.semantic_gate if cfg.semantics_enabled else "off"
        self.soft = cfg.soft_weight
        if self.gate != "off" and cfg.gate_ignore:
            self.ignore = np.zeros(256, bool)
            self.ignore[[int(c) for c in cfg.gate_ignore]] = True
        else:
            self.ignore = None

    def evaluate(self, T):
        X = self.src @ T[:3, :3].T + T[:3, 3]
        d, idx = self.map.nearest(X, self.tau)
        has = idx >= 0
        w_sem = np.ones(len(X))
        rejected = 0
        if self.gate != "off" and self.src_lab is not None:
            ok = np.ones(len(X), bool)
            ok[has] = _compat(self.src_lab[has], self.map.labels[idx[has]], self.ignore)
            if self.gate == "hard":
                rejected = int((has & ~ok).sum())
                has &= ok
            else:
                w_sem[~ok] = self.soft
        rho_max = _cauchy_rho(self.tau, self.tau)
        rho = np.full(len(X), rho_max)
        rho[has] = w_sem[has] * _cauchy_rho(d[has], self.tau) + (1 - w_sem[has]) * rho_max
        return dict(X=X, d=d, idx=idx, has=has, w_sem=w_sem, cost=float(rho.sum()), rejected=rejected)


def _normal_equations(ev, map_pts, tau):
    """Weighted Gauss-Newton system for the left perturbation, J_i = [I, -[X_i]x]."""
    has = ev["has"]
    X = ev["X"][has]
    e = X - map_pts[ev["idx"][has]]
    r = ev["d"][has]
    w = ev["w_sem"][has] / (1.0 + (r / tau) ** 2)
    wX = X * w[:, None]
    S = wX.sum(0)
    H = np.zeros((6, 6))
    H[:3, :3] = np.eye(3) * w.sum()
    H[:3, 3:] = -skew(S)
    H[3:, :3] = skew(S)
    H[3:, 3:] = np.eye(3) * float(np.sum(wX * X)) - X.T @ wX
    b = np.concatenate([(e * w[:, None]).sum(0), np.cross(wX, e).sum(0)])
    return H, b


def _solve(H, b, lam):
    A = H + lam * np.diag(np.diag(H)) if lam > 0 else H
    try:
        return np.linalg.solve(A, -b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, -b, rcond=None)[0]


def register(source, vmap: VoxelHashMap, init: Pose, cfg: OdometryConfig, tau: float | None = None,
             max_retries: int = 6) -> RegistrationResult:
    """Align ``source`` (points + optional labels) to ``vmap`` starting from ``init``.

    Each accepted Gauss-Newton step does not increase the truncated Cauchy cost;
    a step that would is retried with Levenberg damping, and iteration stops
    when no damped step helps or the increment is below ``convergence_eps``
    (source-centroid displacement combined with rotation angle in radians).
    """
    tau = cfg.initial_threshold if tau is None else float(tau)
    pts = np.asarray(source.points, float)
    labels = source.labels if (cfg.semantics_enabled and source.labels is not None) else None
    if labels is not None:
        labels = labels.astype(np.intp)
    m = _Matcher(pts, labels, vmap, tau, cfg)
    T = init.matrix()
    ev = m.evaluate(T)
    if not len(pts) or vmap.empty or not ev["has"].any():
        return RegistrationResult(init, Pose.identity(), 0, math.inf, 0, ev["rejected"], tau, True, (ev["cost"],))
    history = [ev["cost"]]
    it = 0
    while it < cfg.max_iterations:
        it += 1
        H, b = _normal_equations(ev, vmap.points, tau)
        lam = 0.0
        accepted = False
        for _ in range(max_retries + 1):
            delta = _solve(H, b, lam)
            D = se3_exp_matrix(delta)
            T_new = D @ T
            ev_new = m.evaluate(T_new)
            if ev_new["cost"] <= ev["cost"] and ev_new["has"].any():
                accepted = True
                break
            lam = 1e-4 if lam == 0 else lam * 10
        if not accepted:
            break
        # increment size: displacement of the source centroid and rotation angle,
        # both unchanged when the whole problem is moved by a rigid transform
        c = ev["X"].mean(0)
        step = math.hypot(float(np.linalg.norm(D[:3, :3] @ c + D[:3, 3] - c)), float(np.linalg.norm(delta[3:])))
        T, ev = T_new, ev_new
        history.append(ev["cost"])
        if step < cfg.convergence_eps:
            break
    has = ev["has"]
    pose = Pose.from_matrix(T)
    d = ev["d"]
    mean_res = float(d[has].mean())
    fitness = float(np.where(has, np.minimum(d, tau), tau).mean())
    return RegistrationResult(pose, pose @ init.inverse(), it, mean_res, int(has.sum()), ev["rejected"], fitness,
                              False, tuple(history))


class AdaptiveThreshold:
    """tau = max(tau_min, alpha * RMS model deviation), deviations measured as point displacement at max range."""

    def __init__(self, cfg: OdometryConfig):
        self.cfg = cfg
        self.sse = 0.0
        self.n = 0

    def update(self, predicted: Pose, estimated: Pose):
        if np.linalg.norm(estimated.translation) < self.cfg.min_motion:
            return
        dev = predicted.inverse() @ estimated
        err = np.linalg.norm(dev.translation) + 2 * self.cfg.max_range * math.sin(dev.angle() / 2)
        self.sse += err * err
        self.n += 1

    @property
    def value(self):
        if self.n == 0:
            return self.cfg.initial_threshold
        return max(self.cfg.tau_min, self.cfg.tau_alpha * math.sqrt(self.sse / self.n))


@dataclass
class FrameResult:
    index: int
    stamp: int
    pose: Pose
    registration: RegistrationResult | None
    degenerate: bool
    points_in: int
    points_registered: int
    tau: float


class Odometry:
    """Sequential scan-to-map odometry. Clouds are given in the vehicle frame."""

    def __init__(self, cfg: OdometryConfig | None = None, reg_filter: FilterSpec | None = None,
                 map_filter: FilterSpec | None = None, initial_pose: Pose | None = None):
        self.cfg = cfg or OdometryConfig()
        self.reg_filter = reg_filter or FilterSpec()
        self.map_filter = map_filter or FilterSpec()
        self.initial_pose = initial_pose or Pose.identity()
        self.map = VoxelHashMap(self.cfg.map_voxel, self.cfg.max_points_per_voxel)
        self.threshold = AdaptiveThreshold(self.cfg)
        self.poses: list = []
        self.deltas: list = []
        self.stamps: list = []
        self.results: list = []

    def _semantic(self, cloud, spec):
        if not self.cfg.semantics_enabled:
            return cloud
        return apply_filter(cloud, spec)

    def process_frame(self, cloud) -> FrameResult:
        cfg = self.cfg
        if not cfg.semantics_enabled and cloud.labels is not None:
            cloud = cloud.without_labels()
        pred = predict(self.deltas)
        if cfg.deskew and self.deltas:
            cloud = deskew(cloud, pred, cfg.scan_period_s)
        src = preprocess(cloud, cfg)
        reg_src = self._semantic(src, self.reg_filter)
        tau = self.threshold.value
        res = None
        degenerate = False
        if not self.poses:
            pose = self.initial_pose
        else:
            last = self.poses[-1]
            init = last @ pred
            res = register(reg_src, self.map, init, cfg, tau)
            degenerate = res.degenerate
            pose = init if degenerate else res.pose
            delta = last.inverse() @ pose
            # with an empty history the prediction is not a motion model; skip its "error"
            if not degenerate and self.deltas:
                self.threshold.update(pred, delta)
            self.deltas.append(delta)
        self.poses.append(pose)
        self.stamps.append(cloud.stamp)
        ins = self._semantic(src, self.map_filter)
        world = pose.transform_points(ins.points)
        self.map.insert(world, ins.labels if cfg.semantics_enabled else None)
        self.map.evict(pose.translation, cfg.max_range)
        out = FrameResult(len(self.poses) - 1, cloud.stamp, pose, res, degenerate, len(cloud), len(reg_src), tau)
        self.results.append(out)
        return out

    def trajectory(self):
        from .evaluation import Trajectory

        return Trajectory(self.stamps, self.poses)


def class_set(names) -> frozenset:
    return frozenset(UnifiedClass(c) for c in parse_classes(names))


__all__ = [
    "GATE_MODES", "OdometryConfig", "VoxelHashMap", "preprocess", "predict", "deskew", "register",
    "RegistrationResult", "AdaptiveThreshold", "FrameResult", "Odometry", "voxel_keys", "key_to_index",
    "skew", "class_set",
]
