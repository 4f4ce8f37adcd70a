"""Pose graph over SE(3): odometry and loop edges, GNSS position factors, LM refinement.

Poses are perturbed on the right, ``X <- X exp(delta)`` with
``delta = (rho, phi)``. Edge residuals are ``log(Z^-1 Xi^-1 Xj)``; GNSS
residuals are ``t(X) + R(X) l - g`` for a lever arm ``l`` in the vehicle frame.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Pose, SingularGraphError
from .core.errors import ConfigError, DataError
from .core.geometry import se3_adjoint, se3_exp_matrix, se3_log_matrix, se3_right_jacobian_inv, skew
from .gnss import GnssFix, geodetic_to_enu, read_gnss_csv, write_gnss_csv  # noqa: F401  (re-exported)
from .odometry import OdometryConfig, VoxelHashMap, register

log = logging.getLogger(__name__)

ODOMETRY = "odometry"
LOOP = "loop"


@dataclass
class GraphNode:
    id: int
    stamp: int
    pose: Pose
    cloud: object = None  # optional keyframe cloud (vehicle frame)


@dataclass(frozen=True)
class BinaryEdge:
    i: int
    j: int
    measurement: Pose  # expected Xi^-1 Xj
    information: np.ndarray
    kind: str = ODOMETRY

    def __post_init__(self):
        info = np.asarray(self.information, float)
        if info.shape != (6, 6) or not np.allclose(info, info.T) or np.linalg.eigvalsh(info).min() <= 0:
            raise ConfigError(f"edge {self.i}->{self.j}: information must be 6x6 symmetric positive definite")
        if self.kind not in (ODOMETRY, LOOP):
            raise ConfigError(f"unknown edge kind {self.kind!r}")
        if self.kind == ODOMETRY and not self.i < self.j:
            raise ConfigError("odometry edges need from < to")
        object.__setattr__(self, "information", info)


@dataclass(frozen=True)
class GnssFactor:
    node: int
    position: np.ndarray
    information: np.ndarray
    lever_arm: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        pos = np.asarray(self.position, float).reshape(3)
        info = np.asarray(self.information, float)
        if not np.all(np.isfinite(pos)):
            raise DataError(f"GNSS factor on node {self.node}: non-finite position")
        if info.shape != (3, 3) or not np.allclose(info, info.T) or np.linalg.eigvalsh(info).min() <= 0:
            raise ConfigError("GNSS information must be 3x3 symmetric positive definite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "information", info)


def diag_information(sigma_t, sigma_r):
    return np.diag([1 / sigma_t**2] * 3 + [1 / sigma_r**2] * 3)


# --- residuals and exact Jacobians -----------------------------------------------------------

def edge_residual(Xi, Xj, Z):
    """Residual and Jacobians w.r.t. right perturbations of Xi and Xj (4x4 inputs)."""
    A = np.linalg.inv(Xi) @ Xj
    E = np.linalg.inv(Z) @ A
    r = se3_log_matrix(E)
    Jr_inv = se3_right_jacobian_inv(r)
    Jj = Jr_inv
    Ji = -Jr_inv @ se3_adjoint(np.linalg.inv(A))
    return r, Ji, Jj


def gnss_residual(X, g, lever=(0.0, 0.0, 0.0)):
    R = X[:3, :3]
    lever = np.asarray(lever, float)
    r = X[:3, 3] + R @ lever - g
    J = np.zeros((3, 6))
    J[:, :3] = R
    J[:, 3:] = -R @ skew(lever)
    return r, J


def _huber(s, delta):
    """Cost and IRLS weight for a squared whitened norm ``s``."""
    n = math.sqrt(s)
    if n <= delta:
        return s, 1.0
    return 2 * delta * n - delta * delta, delta / n


@dataclass
class OptimizeResult:
    poses: list
    iterations: int
    initial_cost: float
    final_cost: float
    cost_history: list
    converged: bool


@dataclass
class PoseGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    gnss: list = field(default_factory=list)
    loop_huber_delta: float = 1.0  # meters

    def add_node(self, stamp, pose, cloud=None) -> int:
        nid = len(self.nodes)
        if self.nodes and stamp <= self.nodes[-1].stamp:
            raise DataError("graph nodes must be added in strictly increasing stamp order")
        self.nodes.append(GraphNode(nid, int(stamp), pose, cloud))
        return nid

    def add_edge(self, edge: BinaryEdge):
        n = len(self.nodes)
        if not (0 <= edge.i < n and 0 <= edge.j < n) or edge.i == edge.j:
            raise DataError(f"edge {edge.i}->{edge.j} references unknown nodes")
        self.edges.append(edge)

    def add_gnss(self, factor: GnssFactor):
        if not 0 <= factor.node < len(self.nodes):
            raise DataError(f"GNSS factor references unknown node {factor.node}")
        self.gnss.append(factor)

    @property
    def poses(self):
        return [n.pose for n in self.nodes]

    # --- structure ---------------------------------------------------------------------------
    def components(self):
        parent = list(range(len(self.nodes)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for e in self.edges:
            ra, rb = find(e.i), find(e.j)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        comps = {}
        for k in range(len(self.nodes)):
            comps.setdefault(find(k), []).append(k)
        return list(comps.values())

    def check_gauge(self, anchor):
        """Every connected component needs a GNSS factor or the anchored node."""
        has_gnss = {f.node for f in self.gnss}
        for comp in self.components():
            if anchor is not None and anchor in comp:
                continue
            if not has_gnss.intersection(comp):
                raise SingularGraphError(comp)

    # --- cost --------------------------------------------------------------------------------
    def _loop_delta(self, info):
        sig_t = 1.0 / math.sqrt(np.mean(np.diag(info)[:3]))
        return self.loop_huber_delta / sig_t

    def cost(self, mats=None):
        mats = mats if mats is not None else [n.pose.matrix() for n in self.nodes]
        total = 0.0
        for e in self.edges:
            r, _, _ = edge_residual(mats[e.i], mats[e.j], e.measurement.matrix())
            s = float(r @ e.information @ r)
            total += _huber(s, self._loop_delta(e.information))[0] if e.kind == LOOP else s
        for f in self.gnss:
            r, _ = gnss_residual(mats[f.node], f.position, f.lever_arm)
            total += float(r @ f.information @ r)
        return total

    def _linearize(self, mats, var_index):
        n = len(var_index) and max(var_index.values()) + 1
        rows, cols, vals = [], [], []
        b = np.zeros(6 * n)

        def add_block(a, c, M):
            ia, ic = var_index.get(a), var_index.get(c)
            if ia is None or ic is None:
                return
            r_ = np.repeat(np.arange(6 * ia, 6 * ia + 6), 6)
            c_ = np.tile(np.arange(6 * ic, 6 * ic + 6), 6)
            rows.append(r_)
            cols.append(c_)
            vals.append(M.ravel())

        def add_grad(a, g):
            ia = var_index.get(a)
            if ia is not None:
                b[6 * ia:6 * ia + 6] += g

        for e in self.edges:
            r, Ji, Jj = edge_residual(mats[e.i], mats[e.j], e.measurement.matrix())
            W = e.information
            if e.kind == LOOP:
                W = W * _huber(float(r @ W @ r), self._loop_delta(W))[1]
            add_block(e.i, e.i, Ji.T @ W @ Ji)
            add_block(e.j, e.j, Jj.T @ W @ Jj)
            add_block(e.i, e.j, Ji.T @ W @ Jj)
            add_block(e.j, e.i, Jj.T @ W @ Ji)
            add_grad(e.i, Ji.T @ W @ r)
            add_grad(e.j, Jj.T @ W @ r)
        for f in self.gnss:
            r, J = gnss_residual(mats[f.node], f.position, f.lever_arm)
            add_block(f.node, f.node, J.T @ f.information @ J)
            add_grad(f.node, J.T @ f.information @ r)
        if rows:
            H = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(6 * n, 6 * n))
        else:
            H = sp.csc_matrix((6 * n, 6 * n))
        return H, b

    # --- solver ------------------------------------------------------------------------------
    def optimize(self, max_iterations=50, damping=1e-4, rel_tol=1e-9, anchor="auto",
                 gradient_tol=1e-10) -> OptimizeResult:
        """Levenberg-Marquardt over all free node poses; updates ``self.nodes`` in place.

        ``anchor="auto"`` fixes node 0 when the graph has no GNSS factors.
        Stops when the relative cost decrease drops below ``rel_tol``, when the
        largest gradient entry is below ``gradient_tol`` (an already optimal
        graph is returned untouched) or after ``max_iterations``.
        """
        if not self.nodes:
            return OptimizeResult([], 0, 0.0, 0.0, [0.0], True)
        if anchor == "auto":
            anchor = None if self.gnss else 0
        self.check_gauge(anchor)
        var_index = {}
        for k in range(len(self.nodes)):
            if k != anchor:
                var_index[k] = len(var_index)
        mats = [n.pose.matrix() for n in self.nodes]
        cost = self.cost(mats)
        history = [cost]
        initial = cost
        lam = damping
        converged = False
        it = 0
        while it < max_iterations and cost > 0 and var_index:
            it += 1
            H, b = self._linearize(mats, var_index)
            if np.abs(b).max() < gradient_tol:
                converged = True
                it -= 1
                break
            d = H.diagonal()
            improved = False
            for _ in range(12):
                A = H + sp.diags(lam * np.maximum(d, 1e-12) + 1e-12, format="csc")
                try:
                    step = spla.spsolve(A, -b)
                except RuntimeError as e:  # pragma: no cover - factorization failure
                    raise SingularGraphError(range(len(self.nodes)), f"pose graph solve failed: {e}") from None
                if not np.all(np.isfinite(step)):
                    raise SingularGraphError(range(len(self.nodes)), "pose graph system is singular")
                trial = list(mats)
                for k, v in var_index.items():
                    trial[k] = mats[k] @ se3_exp_matrix(step[6 * v:6 * v + 6])
                new_cost = self.cost(trial)
                if new_cost <= cost:
                    improved = True
                    break
                lam *= 4.0
            if not improved:
                converged = True
                break
            rel = (cost - new_cost) / max(cost, 1e-300)
            mats, cost = trial, new_cost
            history.append(cost)
            lam = max(lam / 3.0, 1e-12)
            if rel < rel_tol:
                converged = True
                break
        if len(history) > 1:
            for k, M in enumerate(mats):
                self.nodes[k].pose = Pose.from_matrix(M)
        return OptimizeResult(self.poses, it, initial, cost, history, converged)


# --- construction helpers -------------------------------------------------------------------

def select_keyframes(poses, min_distance=2.0, min_angle_deg=10.0):
    """Indices of keyframes: the first pose, then any pose that moved > 2 m or > 10 deg since the last one."""
    if not poses:
        return []
    keys = [0]
    for k in range(1, len(poses)):
        d = poses[keys[-1]].inverse() @ poses[k]
        if np.linalg.norm(d.translation) > min_distance or math.degrees(d.angle()) > min_angle_deg:
            keys.append(k)
    return keys


def chain_graph(stamps, poses, sigma_t=0.05, sigma_r_deg=0.5, clouds=None) -> PoseGraph:
    """Nodes at every pose, odometry edges between consecutive ones measuring the given chain."""
    g = PoseGraph()
    info = diag_information(sigma_t, math.radians(sigma_r_deg))
    for k, (s, p) in enumerate(zip(stamps, poses)):
        g.add_node(s, p, None if clouds is None else clouds[k])
    for k in range(1, len(poses)):
        g.add_edge(BinaryEdge(k - 1, k, poses[k - 1].inverse() @ poses[k], info, ODOMETRY))
    return g


def attach_gnss(graph: PoseGraph, fixes, max_dt_ns=50_000_000, lever_arm=(0.0, 0.0, 0.0), min_sigma=1e-3):
    """Attach each fix to the node nearest in time (within ``max_dt_ns``). Returns the count attached."""
    stamps = np.array([n.stamp for n in graph.nodes], dtype=np.int64)
    count = 0
    for f in fixes:
        k = int(np.argmin(np.abs(stamps - f.stamp)))
        if abs(int(stamps[k]) - f.stamp) > max_dt_ns:
            continue
        s = max(float(f.sigma), min_sigma)
        graph.add_gnss(GnssFactor(k, np.asarray(f.position, float), np.eye(3) / s**2, tuple(lever_arm)))
        count += 1
    return count


@dataclass(frozen=True)
class LoopParams:
    search_radius: float = 10.0
    min_gap_s: float = 10.0
    fitness_threshold: float = 0.25  # mean residual of matched pairs, meters
    min_overlap: float = 0.3  # fraction of source points with a correspondence
    coarse_tau: float = 2.0
    fine_tau: float = 0.5
    max_per_node: int = 1


@dataclass
class LoopCandidate:
    i: int
    j: int
    accepted: bool
    mean_residual: float
    overlap: float
    measurement: Pose


def detect_loops(nodes, params: LoopParams = LoopParams(), cfg: OdometryConfig | None = None,
                 keyframes=None, sigma_floor=0.02, candidates_out=None) -> list:
    """Loop edges between keyframe pairs that are close in space but far apart in time.

    For each keyframe ``j``, the closest earlier keyframe ``i`` within
    ``search_radius`` and at least ``min_gap_s`` older is registered
    (source = cloud j, map = cloud i, init from the current estimates), first
    with a coarse then a fine threshold. Accepted when the fine mean residual
    is below ``fitness_threshold`` and at least ``min_overlap`` of the source
    points found a correspondence. The edge's translation sigma is that mean
    residual (floored at ``sigma_floor``), its rotation sigma a twentieth of it
    in radians.
    """
    cfg = cfg or OdometryConfig()
    keyframes = list(range(len(nodes))) if keyframes is None else list(keyframes)
    keyframes = [k for k in keyframes if nodes[k].cloud is not None and len(nodes[k].cloud)]
    pos = np.array([nodes[k].pose.translation for k in keyframes]).reshape(-1, 3)
    edges = []
    maps = {}
    for b, j in enumerate(keyframes):
        nj = nodes[j]
        gap_ok = [a for a in range(b) if (nj.stamp - nodes[keyframes[a]].stamp) * 1e-9 >= params.min_gap_s]
        if not gap_ok:
            continue
        d = np.linalg.norm(pos[gap_ok] - pos[b], axis=1)
        order = np.argsort(d, kind="stable")
        found = 0
        for o in order:
            if d[o] > params.search_radius or found >= params.max_per_node:
                break
            i = keyframes[gap_ok[o]]
            if i not in maps:
                m = VoxelHashMap(cfg.map_voxel, cfg.max_points_per_voxel)
                m.insert(nodes[i].cloud.points, nodes[i].cloud.labels)
                maps[i] = m
            init = nodes[i].pose.inverse() @ nj.pose
            coarse = register(nj.cloud, maps[i], init, cfg, params.coarse_tau)
            if coarse.degenerate:
                continue
            fine = register(nj.cloud, maps[i], coarse.pose, cfg, params.fine_tau)
            overlap = fine.correspondences / max(len(nj.cloud), 1)
            ok = (not fine.degenerate and fine.mean_residual < params.fitness_threshold
                  and overlap >= params.min_overlap)
            if candidates_out is not None:
                candidates_out.append(LoopCandidate(i, j, ok, fine.mean_residual, overlap, fine.pose))
            if ok:
                s = max(fine.mean_residual, sigma_floor)
                info = diag_information(s, s / 20.0)
                edges.append(BinaryEdge(i, j, fine.pose, info, LOOP))
                found += 1
    return edges


__all__ = [
    "GraphNode", "BinaryEdge", "GnssFactor", "PoseGraph", "OptimizeResult", "LoopParams", "LoopCandidate",
    "edge_residual", "gnss_residual", "diag_information", "select_keyframes", "chain_graph", "attach_gnss",
    "detect_loops", "GnssFix", "read_gnss_csv", "write_gnss_csv", "geodetic_to_enu", "ODOMETRY", "LOOP",
]
