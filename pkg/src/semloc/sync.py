"""Approximate-time matching of several timestamped streams.

Each call to :meth:`ApproximateTimeSynchronizer.try_emit` picks, over the
currently buffered messages, one message per stream so that the spread
(latest minus earliest stamp) is minimal. Ties go to the earlier pivot, then
to earlier messages within a stream. There is no waiting heuristic: a tuple
is emitted as soon as it is admissible.
"""
from __future__ import annotations

import bisect
import heapq
import math
from collections import deque
from dataclasses import dataclass

from .core.errors import DataError

DEFAULT_SLOP_NS = 50_000_000
DEFAULT_CAPACITY = 10


class OutOfOrderError(DataError):
    pass


@dataclass(frozen=True)
class MatchedTuple:
    members: dict  # stream id -> (stamp_ns, handle)

    @property
    def pivot(self) -> int:
        return max(s for s, _ in self.members.values())

    @property
    def spread(self) -> int:
        stamps = [s for s, _ in self.members.values()]
        return max(stamps) - min(stamps)

    def stamp(self, stream_id) -> int:
        return self.members[stream_id][0]

    def handle(self, stream_id):
        return self.members[stream_id][1]


class StreamBuffer:
    def __init__(self, stream_id, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.stream_id = stream_id
        self.capacity = capacity
        self.queue = deque()
        self.last_stamp = None
        self.evicted = 0

    def push(self, stamp, handle):
        stamp = int(stamp)
        if stamp < 0:
            raise OutOfOrderError(f"stream {self.stream_id!r}: negative stamp {stamp}")
        if self.last_stamp is not None and stamp < self.last_stamp:
            raise OutOfOrderError(
                f"stream {self.stream_id!r}: stamp {stamp} is older than last pushed {self.last_stamp}"
            )
        self.last_stamp = stamp
        self.queue.append((stamp, handle))
        if len(self.queue) > self.capacity:
            self.queue.popleft()
            self.evicted += 1

    def __len__(self):
        return len(self.queue)


class ApproximateTimeSynchronizer:
    """Sequential matcher; callers serialize ``push`` and ``try_emit``."""

    def __init__(self, stream_ids, slop_ns=DEFAULT_SLOP_NS, capacity=DEFAULT_CAPACITY):
        ids = list(stream_ids)
        if len(set(ids)) != len(ids) or not ids:
            raise ValueError("stream ids must be unique and non-empty")
        self.stream_ids = ids
        self.slop_ns = slop_ns
        self.buffers = {s: StreamBuffer(s, capacity) for s in ids}
        self.last_pivot = None

    def push(self, stream_id, stamp, handle=None):
        try:
            buf = self.buffers[stream_id]
        except KeyError:
            raise DataError(f"unknown stream {stream_id!r}") from None
        buf.push(stamp, handle)

    def _best(self):
        """(spread, pivot, low) of the best admissible selection, or None."""
        stamps = [[st for st, _ in self.buffers[s].queue] for s in self.stream_ids]
        if any(not q for q in stamps):
            return None
        best = None
        for p in sorted({st for q in stamps for st in q}):
            if self.last_pivot is not None and p <= self.last_pivot:
                continue
            low = p
            for q in stamps:
                i = bisect.bisect_right(q, p)
                if i == 0:
                    break
                low = min(low, q[i - 1])
            else:
                if best is None or p - low < best[0]:
                    best = (p - low, p, low)
        return best

    def try_emit(self, slop_ns=None):
        slop = self.slop_ns if slop_ns is None else slop_ns
        best = self._best()
        if best is None or best[0] > slop:
            return None
        spread, pivot, low = best
        members = {}
        for s in self.stream_ids:
            q = self.buffers[s].queue
            idx = next(i for i, (st, _) in enumerate(q) if low <= st <= pivot)
            members[s] = q[idx]
            for _ in range(idx + 1):
                q.popleft()
        self.last_pivot = pivot
        return MatchedTuple(members)

    def drain(self, slop_ns=None):
        out = []
        while (t := self.try_emit(slop_ns)) is not None:
            out.append(t)
        return out


def match_streams(streams, slop_ns=DEFAULT_SLOP_NS, capacity=DEFAULT_CAPACITY):
    """Replay recorded streams in stamp order and collect every emitted tuple.

    ``streams`` maps stream id -> sorted list of ``(stamp, handle)``. Events
    with equal stamps are replayed in the order streams are listed.
    """
    order = {s: i for i, s in enumerate(streams)}
    sync = ApproximateTimeSynchronizer(list(streams), slop_ns, capacity)
    events = heapq.merge(*[[(st, order[s], s, h) for st, h in msgs] for s, msgs in streams.items()])
    out = []
    for st, _, s, h in events:
        sync.push(s, st, h)
        out.extend(sync.drain())
    return out


def match_lidar_cameras(lidar_stamps, camera_stamps, slop_ns=DEFAULT_SLOP_NS, capacity=DEFAULT_CAPACITY,
                        joint=True):
    """Pair LiDAR scans with camera frames.

    Returns ``{lidar_stamp: {camera: camera_stamp}}``. In joint mode all
    cameras are matched in a single tuple with the scan; otherwise each
    camera is matched against the LiDAR independently, so a scan may end up
    with only some cameras.
    """
    lidar = [(s, s) for s in lidar_stamps]
    result = {}
    if joint:
        streams = {"lidar": lidar, **{c: [(s, s) for s in st] for c, st in camera_stamps.items()}}
        for t in match_streams(streams, slop_ns, capacity):
            result[t.stamp("lidar")] = {c: t.stamp(c) for c in camera_stamps}
        return result
    for c, st in camera_stamps.items():
        for t in match_streams({"lidar": lidar, c: [(s, s) for s in st]}, slop_ns, capacity):
            result.setdefault(t.stamp("lidar"), {})[c] = t.stamp(c)
    return result


INFINITE_SLOP = math.inf
