"""Primitive world (ground plane, axis-aligned boxes, vertical cylinders) and ray casting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from ..core import UnifiedClass

_EPS = 1e-9
_PARALLEL = 1e-15


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    cls: UnifiedClass
    velocity: tuple = (0.0, 0.0, 0.0)

    @property
    def dynamic(self):
        return any(v != 0 for v in self.velocity)


@dataclass(frozen=True)
class Cylinder:
    center: tuple  # (x, y)
    radius: float
    z0: float
    z1: float
    cls: UnifiedClass


@dataclass(frozen=True)
class GroundRegion:
    """Axis-aligned xy rectangle of the ground plane with its own class."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    cls: UnifiedClass


@dataclass
class World:
    boxes: list = field(default_factory=list)
    cylinders: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    ground: bool = True
    ground_class: UnifiedClass = UnifiedClass.TERRAIN
    motion_ramp_s: float = 0.0  # movers accelerate from rest over this long, then hold their velocity

    def __post_init__(self):
        self._packed = None

    def motion_time(self, times):
        """Map wall-clock seconds to the time at which a constant-velocity mover has covered the same distance."""
        times = np.asarray(times, dtype=np.float64)
        T = self.motion_ramp_s
        if T <= 0:
            return times
        u = np.clip(times / T, 0.0, 1.0)
        return np.where(times < T, T * (u**3 - 0.5 * u**4), times - 0.5 * T)

    def packed(self):
        if self._packed is None:
            b = self.boxes
            c = self.cylinders
            r = self.regions
            self._packed = (
                np.array([[*x.lo, *x.hi] for x in b], dtype=np.float64).reshape(-1, 6),
                np.array([x.velocity for x in b], dtype=np.float64).reshape(-1, 3),
                np.array([int(x.cls) for x in b], dtype=np.int64),
                np.array([[*x.center, x.radius, x.z0, x.z1] for x in c], dtype=np.float64).reshape(-1, 5),
                np.array([int(x.cls) for x in c], dtype=np.int64),
                np.array([[x.xmin, x.ymin, x.xmax, x.ymax] for x in r], dtype=np.float64).reshape(-1, 4),
                np.array([int(x.cls) for x in r], dtype=np.int64),
            )
        return self._packed

    def add(self, *prims):
        for p in prims:
            if isinstance(p, Box):
                self.boxes.append(p)
            elif isinstance(p, Cylinder):
                self.cylinders.append(p)
            elif isinstance(p, GroundRegion):
                self.regions.append(p)
            else:
                raise TypeError(type(p))
        self._packed = None
        return self

    @property
    def n_primitives(self):
        return len(self.boxes) + len(self.cylinders) + int(self.ground)

    def primitive_class(self, prim_id):
        """Class of primitive ``prim_id`` (boxes first, then cylinders; ground = -1)."""
        nb = len(self.boxes)
        if prim_id < nb:
            return self.boxes[prim_id].cls
        return self.cylinders[prim_id - nb].cls

    def ground_class_at(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(x.shape, int(self.ground_class), dtype=np.int64)
        done = np.zeros(x.shape, bool)
        for reg in self.regions:
            inside = ~done & (x >= reg.xmin) & (x <= reg.xmax) & (y >= reg.ymin) & (y <= reg.ymax)
            out[inside] = int(reg.cls)
            done |= inside
        return out


GROUND_ID = -1
MISS_ID = -2


@numba.njit(cache=True, error_model="numpy")
def _raycast_kernel(orig, dirs, times, max_range, boxes, bvel, bcls, cyls, ccls, ground, regions, rcls, gcls):
    n = dirs.shape[0]
    t_out = np.full(n, np.inf)
    c_out = np.zeros(n, np.int64)
    p_out = np.full(n, -2, np.int64)
    nb = boxes.shape[0]
    nc = cyls.shape[0]
    for i in range(n):
        ox = orig[i, 0]
        oy = orig[i, 1]
        oz = orig[i, 2]
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        tau = times[i]
        best = max_range
        bc = 0
        bp = -2
        if ground and oz > 0.0 and dz < 0.0:
            t = -oz / dz
            if t > 1e-9 and t <= best:
                best = t
                bp = -1
        for j in range(nb):
            tmin = -np.inf
            tmax = np.inf
            miss = False
            for a in range(3):
                lo = boxes[j, a] + bvel[j, a] * tau
                hi = boxes[j, a + 3] + bvel[j, a] * tau
                o = orig[i, a]
                d = dirs[i, a]
                if abs(d) < 1e-15:
                    if o < lo or o > hi:
                        miss = True
                        break
                else:
                    t1 = (lo - o) / d
                    t2 = (hi - o) / d
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tmin:
                        tmin = t1
                    if t2 < tmax:
                        tmax = t2
            if miss or tmin > tmax:
                continue
            if tmin > 1e-9 and tmin < best:
                best = tmin
                bc = bcls[j]
                bp = j
        for j in range(nc):
            cx = cyls[j, 0]
            cy = cyls[j, 1]
            r = cyls[j, 2]
            z0 = cyls[j, 3]
            z1 = cyls[j, 4]
            px = ox - cx
            py = oy - cy
            a2 = dx * dx + dy * dy
            if a2 > 1e-15:
                b2 = px * dx + py * dy
                c2 = px * px + py * py - r * r
                disc = b2 * b2 - a2 * c2
                if disc >= 0.0:
                    t = (-b2 - np.sqrt(disc)) / a2
                    if t > 1e-9 and t < best:
                        z = oz + t * dz
                        if z >= z0 and z <= z1:
                            best = t
                            bc = ccls[j]
                            bp = nb + j
            if abs(dz) > 1e-15:
                for zc in (z0, z1):
                    t = (zc - oz) / dz
                    if t > 1e-9 and t < best:
                        qx = px + t * dx
                        qy = py + t * dy
                        if qx * qx + qy * qy <= r * r:
                            best = t
                            bc = ccls[j]
                            bp = nb + j
        if bp == -1:
            hx = ox + best * dx
            hy = oy + best * dy
            bc = gcls
            for k in range(regions.shape[0]):
                if hx >= regions[k, 0] and hx <= regions[k, 2] and hy >= regions[k, 1] and hy <= regions[k, 3]:
                    bc = rcls[k]
                    break
        if bp != -2:
            t_out[i] = best
            c_out[i] = bc
            p_out[i] = bp
    return t_out, c_out, p_out


def _prep(origins, dirs, times):
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(dirs)
    origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), (n, 3)))
    times = np.ascontiguousarray(np.broadcast_to(np.asarray(times, dtype=np.float64), (n,)))
    return origins, dirs, times


def _in_cone(center, radius, origin, cone):
    axis, half_angle = cone
    v = center - origin
    dist = np.linalg.norm(v, axis=1)
    inside = dist <= radius
    cosang = (v @ np.asarray(axis, float)) / np.maximum(dist, 1e-12)
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    slack = np.arcsin(np.clip(radius / np.maximum(dist, 1e-12), 0.0, 1.0))
    return inside | (ang <= half_angle + slack)


def _cull(world: World, origin, max_range, t_lo, t_hi, cone=None):
    """Indices of boxes / cylinders that can be hit within ``max_range`` of ``origin``.

    ``cone = (unit axis, half angle)`` further restricts to primitives whose
    bounding sphere intersects the viewing cone.
    """
    boxes, bvel, _, cyls, _, _, _ = world.packed()
    if len(boxes):
        lo = boxes[:, :3] + np.minimum(bvel * t_lo, bvel * t_hi)
        hi = boxes[:, 3:] + np.maximum(bvel * t_lo, bvel * t_hi)
        gap = np.maximum(np.maximum(lo - origin, origin - hi), 0.0)
        keep = np.linalg.norm(gap, axis=1) <= max_range
        if cone is not None:
            keep &= _in_cone(0.5 * (lo + hi), 0.5 * np.linalg.norm(hi - lo, axis=1), origin, cone)
        bi = np.flatnonzero(keep)
    else:
        bi = np.zeros(0, np.int64)
    if len(cyls):
        dxy = np.maximum(np.linalg.norm(cyls[:, :2] - origin[:2], axis=1) - cyls[:, 2], 0.0)
        dz = np.maximum(np.maximum(cyls[:, 3] - origin[2], origin[2] - cyls[:, 4]), 0.0)
        keep = np.hypot(dxy, dz) <= max_range
        if cone is not None:
            c = np.column_stack([cyls[:, :2], 0.5 * (cyls[:, 3] + cyls[:, 4])])
            r = np.hypot(cyls[:, 2], 0.5 * (cyls[:, 4] - cyls[:, 3]))
            keep &= _in_cone(c, r, origin, cone)
        ci = np.flatnonzero(keep)
    else:
        ci = np.zeros(0, np.int64)
    return bi, ci


def raycast(world: World, origins, dirs, times=0.0, max_range=np.inf, cone=None):
    """Nearest hit per ray.

    ``dirs`` should be unit vectors so ``t`` is a range in meters. ``times``
    (seconds) positions moving boxes. Returns ``(t, cls, prim)`` where
    misses have ``t = inf`` and ``prim = -2``; ground hits have ``prim = -1``.
    With a single shared origin and finite ``max_range``, primitives out of
    reach are culled before the per-ray loop; ``cone = (axis, half_angle)``
    must contain every ray direction and culls primitives outside it.
    """
    single = np.asarray(origins).size == 3
    origins, dirs, times = _prep(origins, dirs, times)
    times = world.motion_time(times)
    boxes, bvel, bcls, cyls, ccls, regions, rcls = world.packed()
    cull = single and np.isfinite(max_range) and len(dirs) > 0
    if cull:
        bi, ci = _cull(world, origins[0], max_range, times.min(), times.max(), cone)
        boxes, bvel, bcls, cyls, ccls = boxes[bi], bvel[bi], bcls[bi], cyls[ci], ccls[ci]
    t, c, p = _raycast_kernel(origins, dirs, times, float(max_range), boxes, bvel, bcls, cyls, ccls,
                              bool(world.ground), regions, rcls, int(world.ground_class))
    if cull:
        lut = np.concatenate([bi, ci + len(world.boxes)])
        obj = p >= 0
        p[obj] = lut[p[obj]]
    return t, c, p


def raycast_bruteforce(world: World, origins, dirs, times=0.0, max_range=np.inf):
    """Vectorised all-primitives reference for :func:`raycast`; one primitive at a time."""
    origins, dirs, times = _prep(origins, dirs, times)
    times = world.motion_time(times)
    n = len(dirs)
    cand_t = []
    cand_id = []
    if world.ground:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -origins[:, 2] / dirs[:, 2]
        ok = (origins[:, 2] > 0) & (dirs[:, 2] < 0) & (t > _EPS)
        cand_t.append(np.where(ok, t, np.inf))
        cand_id.append(GROUND_ID)
    for j, b in enumerate(world.boxes):
        lo = np.asarray(b.lo)[None, :] + np.asarray(b.velocity)[None, :] * times[:, None]
        hi = np.asarray(b.hi)[None, :] + np.asarray(b.velocity)[None, :] * times[:, None]
        par = np.abs(dirs) < _PARALLEL
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origins) / dirs
            t2 = (hi - origins) / dirs
        near = np.where(par, -np.inf, np.minimum(t1, t2))
        far = np.where(par, np.inf, np.maximum(t1, t2))
        outside = par & ((origins < lo) | (origins > hi))
        tmin = near.max(axis=1)
        tmax = far.min(axis=1)
        ok = ~outside.any(axis=1) & (tmin <= tmax) & (tmin > _EPS)
        cand_t.append(np.where(ok, tmin, np.inf))
        cand_id.append(j)
    nb = len(world.boxes)
    for j, c in enumerate(world.cylinders):
        px = origins[:, 0] - c.center[0]
        py = origins[:, 1] - c.center[1]
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a2 = dx * dx + dy * dy
        b2 = px * dx + py * dy
        c2 = px * px + py * py - c.radius**2
        disc = b2 * b2 - a2 * c2
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = (-b2 - np.sqrt(np.maximum(disc, 0))) / a2
        z = origins[:, 2] + ts * dz
        side_ok = (a2 > _PARALLEL) & (disc >= 0) & (ts > _EPS) & (z >= c.z0) & (z <= c.z1)
        best = np.where(side_ok, ts, np.inf)
        for zc in (c.z0, c.z1):
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (zc - origins[:, 2]) / dz
            qx = px + tc * dx
            qy = py + tc * dy
            cap_ok = (np.abs(dz) > _PARALLEL) & (tc > _EPS) & (qx * qx + qy * qy <= c.radius**2)
            best = np.minimum(best, np.where(cap_ok, tc, np.inf))
        cand_t.append(best)
        cand_id.append(nb + j)
    t_out = np.full(n, np.inf)
    p_out = np.full(n, MISS_ID, dtype=np.int64)
    c_out = np.zeros(n, dtype=np.int64)
    if cand_t:
        T = np.stack(cand_t)
        k = np.argmin(T, axis=0)
        tbest = T[k, np.arange(n)]
        hit = np.isfinite(tbest) & (tbest <= max_range)
        t_out[hit] = tbest[hit]
        ids = np.asarray(cand_id)[k]
        p_out[hit] = ids[hit]
        for j in range(world.n_primitives - int(world.ground)):
            c_out[hit & (ids == j)] = int(world.primitive_class(j))
        g = hit & (ids == GROUND_ID)
        if g.any():
            pts = origins[g] + tbest[g, None] * dirs[g]
            c_out[g] = world.ground_class_at(pts[:, 0], pts[:, 1])
    return t_out, c_out, p_out
