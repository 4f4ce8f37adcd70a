"""Scenario worlds and ego trajectories.

* ``urban-block``: ~400 m closed loop around a city block, dense facades.
* ``straight-road``: gently curving rural road lined with sparse trees, no loop.
* ``dynamic-traffic``: avenue under sign gantries, with truck convoys pacing the
  ego vehicle in both adjacent lanes, pedestrians and parked cars.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Pose, UnifiedClass as U
from ..core.errors import ConfigError
from .world import Box, Cylinder, GroundRegion, World

SCENARIOS = ("urban-block", "straight-road", "dynamic-traffic")


class CurvePath:
    """Planar path integrated from a curvature profile.

    The vehicle starts at rest and reaches ``speed`` after ``ramp_s`` seconds
    along a smoothstep velocity profile, then cruises.
    """

    def __init__(self, length, curvature, speed, start=(0.0, 0.0, 0.0), ds=0.01, ramp_s=0.0):
        n = int(math.ceil(length / ds))
        s = np.linspace(0.0, length, n + 1)
        k = np.vectorize(curvature, otypes=[float])(s)
        yaw = start[2] + np.concatenate([[0.0], np.cumsum(0.5 * (k[1:] + k[:-1]) * np.diff(s))])
        mid = 0.5 * (yaw[1:] + yaw[:-1])
        x = start[0] + np.concatenate([[0.0], np.cumsum(np.cos(mid) * np.diff(s))])
        y = start[1] + np.concatenate([[0.0], np.cumsum(np.sin(mid) * np.diff(s))])
        self.s, self.x, self.y, self.yaw = s, x, y, yaw
        self.length = length
        self.speed = speed
        self.ramp_s = ramp_s

    def distance(self, t):
        """Arc length driven after ``t`` seconds."""
        T = self.ramp_s
        if t <= 0.0:
            return 0.0
        if t < T:
            u = t / T
            return self.speed * T * (u**3 - 0.5 * u**4)
        return self.speed * (t - 0.5 * T)

    def state(self, t):
        s = float(np.clip(self.distance(t), 0.0, self.length))
        return (float(np.interp(s, self.s, self.x)), float(np.interp(s, self.s, self.y)),
                float(np.interp(s, self.s, self.yaw)))

    def pose(self, t) -> Pose:
        x, y, yaw = self.state(t)
        return Pose.from_rpy(0.0, 0.0, yaw, (x, y, 0.0))

    def points(self, step=1.0):
        idx = np.arange(0, len(self.s), max(1, int(round(step / (self.s[1] - self.s[0])))))
        return np.stack([self.x[idx], self.y[idx]], axis=1)


class LinePath:
    """Straight constant-velocity drive along ``heading``; exact at every time."""

    def __init__(self, speed, heading=0.0, start=(0.0, 0.0)):
        self.speed, self.heading, self.start = speed, heading, start

    def pose(self, t) -> Pose:
        d = self.speed * t
        return Pose.from_rpy(0, 0, self.heading, (self.start[0] + d * math.cos(self.heading),
                                                  self.start[1] + d * math.sin(self.heading), 0.0))


class BodyMotion:
    """Suspension pitch, roll and heave as a few seeded sinusoids.

    Without it the ground rings of a spinning LiDAR stay fixed in the sensor
    frame on a perfectly flat world, which real vehicles never see.
    """

    def __init__(self, rng, pitch_deg=0.1, roll_deg=0.07, heave_m=0.005, freqs=(0.7, 1.3, 2.1)):
        k = len(freqs)
        self.freqs = np.asarray(freqs, float)
        self.phase = rng.uniform(0, 2 * math.pi, (3, k))
        self.amp = np.array([math.radians(pitch_deg), math.radians(roll_deg), heave_m])[:, None] / math.sqrt(k)

    def offsets(self, t):
        """(roll, pitch, heave) at time ``t``."""
        pitch, roll, heave = (self.amp * np.sin(2 * math.pi * self.freqs * t + self.phase)).sum(axis=1)
        return float(roll), float(pitch), float(heave)


@dataclass
class Scenario:
    name: str
    world: World
    path: object
    duration: float
    loop: bool
    body: BodyMotion | None = None

    def pose(self, t) -> Pose:
        p = self.path.pose(t)
        if self.body is None:
            return p
        roll, pitch, heave = self.body.offsets(t)
        return p @ Pose.from_rpy(roll, pitch, 0.0, (0.0, 0.0, heave))


def _corner_curvature(straight, ramp, flat):
    """Four 90-degree left turns joined by straights.

    Each turn ramps curvature up and down with raised-cosine ramps around a
    flat top, keeping yaw acceleration moderate.
    """
    corner = 2 * ramp + flat
    period = straight + corner
    peak = (math.pi / 2) / (ramp + flat)

    def k(s):
        u = (s % period) - straight / 2
        if u < 0 or u >= corner:
            return 0.0
        if u < ramp:
            return peak * 0.5 * (1 - math.cos(math.pi * u / ramp))
        if u < ramp + flat:
            return peak
        return peak * 0.5 * (1 + math.cos(math.pi * (u - ramp - flat) / ramp))

    return k


def _min_dist(path_pts, corners):
    d = np.linalg.norm(path_pts[None, :, :] - corners[:, None, :], axis=2)
    return d.min()


def _box_clear(path_pts, lo, hi, clearance):
    xs = np.linspace(lo[0], hi[0], 5)
    ys = np.linspace(lo[1], hi[1], 5)
    g = np.stack(np.meshgrid(xs, ys), -1).reshape(-1, 2)
    return _min_dist(path_pts, g) >= clearance


def _along(path_pts, rng, step_range, offsets, fn):
    """Walk the path and call ``fn(point, normal, side)`` at random spacing."""
    seg = np.diff(path_pts, axis=0)
    cum = np.concatenate([[0], np.cumsum(np.linalg.norm(seg, axis=1))])
    s = rng.uniform(*step_range)
    while s < cum[-1]:
        i = min(np.searchsorted(cum, s), len(seg) - 1)
        t = seg[i] / (np.linalg.norm(seg[i]) + 1e-12)
        nrm = np.array([-t[1], t[0]])
        p = path_pts[i]
        for side in offsets:
            fn(p, t, nrm, side)
        s += rng.uniform(*step_range)


def urban_block(seed=0, speed=20.0, duration=20.0, ramp_s=0.0):
    rng = np.random.default_rng(seed)
    straight, ramp, flat = 20.0, 30.0, 20.0
    length = speed * duration
    loop_len = 4 * (straight + 2 * ramp + flat)
    path = CurvePath(length, _corner_curvature(straight, ramp, flat), speed, ramp_s=ramp_s)
    pts = CurvePath(loop_len, _corner_curvature(straight, ramp, flat), speed).points(1.0)
    w = World(ground_class=U.TERRAIN)
    lo_xy, hi_xy = pts.min(0), pts.max(0)
    # road tiles along the path, then wider sidewalk tiles (first matching region wins)
    for half, cls in ((4.0, U.ROAD), (7.0, U.SIDEWALK)):
        for x, y in pts[::3]:
            w.add(GroundRegion(x - half, y - half, x + half, y + half, cls))

    def building(p, t, n, side):
        off = side * rng.uniform(10.0, 13.0)
        length_ = rng.uniform(8.0, 18.0)
        depth = rng.uniform(8.0, 14.0)
        h = rng.uniform(6.0, 22.0)
        c0 = p + n * off
        c1 = p + n * (off + side * depth) + t * length_
        lo = np.minimum(c0, c1)
        hi = np.maximum(c0, c1)
        if _box_clear(pts, lo, hi, 9.0):
            w.add(Box((lo[0], lo[1], 0.0), (hi[0], hi[1], h), U.BUILDING))

    _along(pts, rng, (14.0, 24.0), (1, -1), building)

    def furniture(p, t, n, side):
        q = p + n * side * 6.5
        r = rng.uniform()
        if r < 0.4:
            w.add(Cylinder((q[0], q[1]), 0.12, 0.0, 6.0, U.POLE))
        elif r < 0.8:
            w.add(Cylinder((q[0], q[1]), 0.3, 0.0, 3.0, U.TRUNK))
            w.add(Cylinder((q[0], q[1]), 1.8, 3.0, 6.5, U.VEGETATION))
        else:
            c = p + n * side * 5.2
            d = np.abs(t) * 2.2 + np.abs(n) * 0.9
            if _box_clear(pts, c - d, c + d, 3.5):
                w.add(Box((c[0] - d[0], c[1] - d[1], 0.2), (c[0] + d[0], c[1] + d[1], 1.5), U.CAR))

    _along(pts, rng, (8.0, 14.0), (1, -1), furniture)
    return Scenario("urban-block", w, path, duration, True, BodyMotion(rng))


def straight_road(seed=0, speed=20.0, duration=20.0, ramp_s=4.0):
    rng = np.random.default_rng(seed)
    length = speed * duration
    amp, wl = 4.0, length

    def k(s):
        # curvature of y = amp * sin(2 pi x / wl), arc length ~ x
        a = 2 * math.pi / wl
        yp = amp * a * math.cos(a * s)
        ypp = -amp * a * a * math.sin(a * s)
        return ypp / (1 + yp * yp) ** 1.5

    path = CurvePath(length, k, speed, start=(0.0, 0.0, math.atan(amp * 2 * math.pi / wl)), ramp_s=ramp_s)
    pts = CurvePath(length + 200, k, speed, start=(-100.0, 0.0, math.atan(amp * 2 * math.pi / wl))).points(1.0)
    w = World(ground_class=U.TERRAIN)
    w.add(GroundRegion(-200, -4 - amp, length + 200, 4 + amp, U.ROAD))

    def tree(p, t, n, side):
        q = p + n * side * rng.uniform(9.0, 14.0)
        w.add(Cylinder((q[0], q[1]), 0.3, 0.0, 3.0, U.TRUNK))
        w.add(Cylinder((q[0], q[1]), 2.0, 3.0, 7.0, U.VEGETATION))

    _along(pts, rng, (10.0, 25.0), (1,), tree)
    _along(pts, rng, (10.0, 25.0), (-1,), tree)
    return Scenario("straight-road", w, path, duration, False, BodyMotion(rng))


def dynamic_traffic(seed=0, speed=10.0, duration=20.0, convoy_speed=None, ramp_s=3.0):
    rng = np.random.default_rng(seed)
    convoy_speed = speed if convoy_speed is None else convoy_speed
    length = speed * duration
    amp, wl = 1.5, length * 1.5

    def k(s):
        a = 2 * math.pi / wl
        yp = amp * a * math.cos(a * s)
        ypp = -amp * a * a * math.sin(a * s)
        return ypp / (1 + yp * yp) ** 1.5

    path = CurvePath(length, k, speed, start=(0.0, 0.0, math.atan(amp * 2 * math.pi / wl)), ramp_s=ramp_s)
    x0, x1 = -60.0, length + 80.0
    # the whole street pulls away from a signal together
    w = World(ground_class=U.SIDEWALK, motion_ramp_s=ramp_s)
    w.add(GroundRegion(x0 - 50, -9, x1 + 50, 9, U.ROAD))
    # facades with gaps
    for side in (1, -1):
        x = x0
        while x < x1:
            L = rng.uniform(10, 25)
            y_in = side * rng.uniform(14.0, 16.0)
            y_out = y_in + side * rng.uniform(8, 12)
            h = rng.uniform(8, 20)
            w.add(Box((x, min(y_in, y_out), 0.0), (x + L, max(y_in, y_out), h), U.BUILDING))
            # pilasters give the facade relief along the street
            for px in np.arange(x + rng.uniform(0.5, 2.0), x + L - 0.6, rng.uniform(3.0, 5.0)):
                y0, y1 = y_in - side * 0.5, y_in
                w.add(Box((px, min(y0, y1), 0.0), (px + 0.6, max(y0, y1), h), U.BUILDING))
            x += L + rng.uniform(2, 8)
    # poles and parked cars on the curb
    for side in (1, -1):
        x = x0
        while x < x1:
            x += rng.uniform(8, 16)
            if rng.uniform() < 0.5:
                w.add(Cylinder((x, side * 12.0), 0.12, 0.0, 6.0, U.POLE))
            else:
                y = side * 10.0
                w.add(Box((x - 2.2, y - 0.9, 0.2), (x + 2.2, y + 0.9, 1.5), U.CAR))
    # overhead sign gantries: the static structure that stays visible above the traffic
    x = x0 + rng.uniform(5, 15)
    while x < x1:
        w.add(Box((x, -10.5, 5.6), (x + 0.6, 10.5, 6.2), U.OTHER_STRUCTURE))
        for side in (1, -1):
            w.add(Box((x, side * 10.5 - 0.2, 0.0), (x + 0.6, side * 10.5 + 0.2, 6.2), U.POLE))
        for _ in range(rng.integers(1, 4)):
            y = rng.uniform(-8.0, 6.0)
            w.add(Box((x - 0.1, y, 4.4), (x, y + rng.uniform(1.5, 3.0), 5.6), U.TRAFFIC_SIGN))
        x += rng.uniform(20, 35)
    # convoys in both adjacent lanes, same direction
    for lane in (3.8, -3.8):
        x = x0 + rng.uniform(0, 6)
        while x < x1 + convoy_speed * duration:
            L = rng.uniform(8, 12)
            cls = U.TRUCK if rng.uniform() < 0.5 else U.BUS
            w.add(Box((x, lane - 1.25, 0.3), (x + L, lane + 1.25, rng.uniform(3.2, 3.8)), cls,
                      (convoy_speed, 0.0, 0.0)))
            x += L + rng.uniform(4, 8)
    # pedestrians crossing the sidewalks
    for _ in range(40):
        x = rng.uniform(x0, x1)
        y = rng.choice([-1, 1]) * rng.uniform(10.5, 13.0)
        v = rng.choice([-1, 1]) * rng.uniform(1.0, 1.6)
        w.add(Box((x - 0.25, y - 0.25, 0.0), (x + 0.25, y + 0.25, 1.8), U.PERSON, (v, 0.0, 0.0)))
    return Scenario("dynamic-traffic", w, path, duration, False, BodyMotion(rng, pitch_deg=0.3, roll_deg=0.2, heave_m=0.01))


def flat_world(seed=0):
    """Ground plane plus objects that all clear the ground by at least 0.2 m."""
    rng = np.random.default_rng(seed)
    w = World(ground_class=U.TERRAIN)
    w.add(GroundRegion(-100, -4, 100, 4, U.ROAD), GroundRegion(-100, 4, 100, 7, U.SIDEWALK))
    for _ in range(30):
        c = rng.uniform(-40, 40, 2)
        if np.abs(c).max() < 6:
            continue
        s = rng.uniform(1, 4, 2)
        w.add(Box((c[0], c[1], 0.2), (c[0] + s[0], c[1] + s[1], rng.uniform(1, 3)), U.CAR))
    for _ in range(20):
        c = rng.uniform(-40, 40, 2)
        w.add(Cylinder((c[0], c[1]), 1.5, 2.5, 6.0, U.VEGETATION))
    return Scenario("flat-world", w, LinePath(5.0), 10.0, False)


def make_scenario(name, seed=0, **kw) -> Scenario:
    builders = {"urban-block": urban_block, "straight-road": straight_road, "dynamic-traffic": dynamic_traffic,
                "flat-world": flat_world}
    try:
        return builders[name](seed, **kw)
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(builders)}") from None
