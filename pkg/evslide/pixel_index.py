"""Pixel-queue spatial index with two-stage radius search.

Every pixel keeps its events in a time-sorted queue. A radius query first
walks the precomputed integer disk of pixel offsets (stage 1), then
binary-searches each candidate queue for the timestamps that can still lie
inside the ball (stage 2). Membership is always decided by the same exact
predicate the brute-force scan uses.
"""

import heapq
import logging
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Sequence, Set, Tuple

from .config import SensorGeometry
from .errors import (
    DuplicateTimestampError,
    EventValidationError,
    IndexQueryError,
    OutOfOrderError,
)
from .models import Event

logger = logging.getLogger(__name__)

Query = Tuple[int, int, int]  # (x0, y0, t0)
# (weighted squared distance, t, y, x, node id); tuple order is the neighbor ranking
Candidate = Tuple[float, int, int, int, int]

_COMPACT_MIN = 32


def within_radius(dx: int, dy: int, dt: int, radius: float, alpha: float) -> bool:
    """Strict ball membership shared by every search path."""
    return dx * dx + dy * dy + (alpha * dt) ** 2 < radius * radius


def scaled_sq_distance(dx: int, dy: int, dt: int, alpha: float) -> float:
    return dx * dx + dy * dy + (alpha * dt) ** 2


@dataclass(frozen=True)
class DistanceField:
    """Integer pixel offsets strictly inside a disk of radius R."""

    radius: float
    offsets: Tuple[Tuple[int, int, int], ...]  # (dx, dy, dx^2 + dy^2)

    def __len__(self) -> int:
        return len(self.offsets)


@lru_cache(maxsize=None)
def distance_field(radius: float) -> DistanceField:
    """Build (once per radius) the lattice disk used as stage 1 of every query."""
    if not radius > 0:
        raise IndexQueryError(f"radius must be positive, got {radius}")
    r2 = radius * radius
    reach = math.ceil(radius)
    offsets = [
        (dx, dy, dx * dx + dy * dy)
        for dy in range(-reach, reach + 1)
        for dx in range(-reach, reach + 1)
        if dx * dx + dy * dy < r2
    ]
    offsets.sort(key=lambda o: (o[2], o[1], o[0]))
    return DistanceField(radius=radius, offsets=tuple(offsets))


class PixelQueue:
    """Time-sorted entries of one pixel with O(1) append and amortized O(1) pop."""

    __slots__ = ("_ts", "_ps", "_ids", "_head", "capacity")

    def __init__(self, capacity: Optional[int] = None):
        self._ts: List[int] = []
        self._ps: List[int] = []
        self._ids: List[int] = []
        self._head = 0
        self.capacity = capacity

    def __len__(self) -> int:
        return len(self._ts) - self._head

    @property
    def newest_t(self) -> Optional[int]:
        return self._ts[-1] if len(self) else None

    @property
    def oldest(self) -> Optional[Tuple[int, int]]:
        if not len(self):
            return None
        return self._ts[self._head], self._ids[self._head]

    @property
    def newest(self) -> Optional[Tuple[int, int]]:
        if not len(self):
            return None
        return self._ts[-1], self._ids[-1]

    def append(self, t: int, p: int, node_id: int) -> Optional[Tuple[int, int]]:
        """Append at the tail; returns the (t, node id) pushed out by the capacity."""
        self._ts.append(t)
        self._ps.append(p)
        self._ids.append(node_id)
        if self.capacity is not None and len(self) > self.capacity:
            return self.popleft()
        return None

    def popleft(self) -> Optional[Tuple[int, int]]:
        if not len(self):
            return None
        h = self._head
        entry = (self._ts[h], self._ids[h])
        self._head = h + 1
        if self._head >= _COMPACT_MIN and 2 * self._head >= len(self._ts):
            del self._ts[: self._head]
            del self._ps[: self._head]
            del self._ids[: self._head]
            self._head = 0
        return entry

    def span(self, t_lo: int, t_hi: int) -> range:
        """Positions of entries with t_lo <= t <= t_hi."""
        lo = bisect_left(self._ts, t_lo, self._head)
        hi = bisect_right(self._ts, t_hi, lo)
        return range(lo, hi)

    def at(self, pos: int) -> Tuple[int, int, int]:
        return self._ts[pos], self._ps[pos], self._ids[pos]

    def entries(self) -> List[Tuple[int, int, int]]:
        """Live (t, p, node id) entries, oldest first."""
        h = self._head
        return list(zip(self._ts[h:], self._ps[h:], self._ids[h:]))

    def is_sorted(self) -> bool:
        ts = self._ts[self._head:]
        return all(a < b for a, b in zip(ts, ts[1:]))


class PixelQueueIndex:
    """Grid of pixel queues over the sensor.

    Single writer; readers must not run concurrently with mutations.
    """

    def __init__(self, geometry: SensorGeometry, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise IndexQueryError(f"queue capacity must be >= 1, got {capacity}")
        self.geometry = geometry
        self.capacity = capacity
        self._grid: List[Optional[PixelQueue]] = [None] * (
            geometry.width * geometry.height
        )
        self._pixel_of: dict = {}  # node id -> flat pixel index
        # candidate entries examined by searches, read by the FLOP meter
        self.examined = 0

    def __len__(self) -> int:
        return len(self._pixel_of)

    @property
    def live_count(self) -> int:
        return len(self._pixel_of)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._pixel_of

    def _flat(self, x: int, y: int) -> int:
        return y * self.geometry.width + x

    def queue(self, pixel: Tuple[int, int]) -> Optional[PixelQueue]:
        x, y = pixel
        if not self.geometry.contains(x, y):
            return None
        return self._grid[self._flat(x, y)]

    def insert(self, event: Event, node_id: int) -> Optional[Tuple[int, int]]:
        """Append ``event`` to its pixel queue.

        Returns the (t, node id) pushed out by the per-pixel capacity, if any.
        """
        if not self.geometry.contains(event.x, event.y):
            raise EventValidationError(f"{event} lies outside the sensor")
        if node_id in self._pixel_of:
            raise IndexQueryError(f"node id {node_id} is already stored")

        flat = self._flat(event.x, event.y)
        q = self._grid[flat]
        if q is None:
            q = self._grid[flat] = PixelQueue(self.capacity)
        newest = q.newest_t
        if newest is not None:
            if event.t == newest:
                raise DuplicateTimestampError(event.x, event.y, event.t)
            if event.t < newest:
                raise OutOfOrderError(
                    f"t={event.t} at pixel {event.pixel} precedes stored t={newest}"
                )

        evicted = q.append(event.t, event.p, node_id)
        self._pixel_of[node_id] = flat
        if evicted is not None:
            del self._pixel_of[evicted[1]]
        return evicted

    def remove_oldest(self, pixel: Tuple[int, int]) -> Optional[Tuple[int, int]]:
        """Pop the head of a pixel queue; None when the queue is empty."""
        q = self.queue(pixel)
        if q is None:
            return None
        entry = q.popleft()
        if entry is not None:
            del self._pixel_of[entry[1]]
        return entry

    def _check_query(self, query: Query, radius: float, alpha: float) -> None:
        if not radius > 0:
            raise IndexQueryError(f"radius must be positive, got {radius}")
        if not alpha > 0:
            raise IndexQueryError(f"temporal scale must be positive, got {alpha}")
        if not self.geometry.contains(query[0], query[1]):
            raise IndexQueryError(
                f"query pixel ({query[0]}, {query[1]}) is outside the sensor"
            )

    def candidates(
        self, query: Query, radius: float, alpha: float
    ) -> Iterable[Candidate]:
        """Yield every stored entry inside the ball, ranked-tuple form."""
        self._check_query(query, radius, alpha)
        x0, y0, t0 = query
        width, height = self.geometry.width, self.geometry.height
        r2 = radius * radius
        grid = self._grid
        examined = 0

        for dx, dy, d2 in distance_field(radius).offsets:
            x, y = x0 + dx, y0 + dy
            if not (0 <= x < width and 0 <= y < height):
                continue
            q = grid[y * width + x]
            if q is None or not len(q):
                continue
            half = math.sqrt(r2 - d2) / alpha
            # widened integer bounds; the exact predicate below decides membership
            span = q.span(math.floor(t0 - half), math.ceil(t0 + half))
            examined += len(span)
            for pos in span:
                t, _, node_id = q.at(pos)
                dt = t - t0
                if within_radius(dx, dy, dt, radius, alpha):
                    yield (d2 + (alpha * dt) ** 2, t, y, x, node_id)

        self.examined += examined

    def radius_search(self, query: Query, radius: float, alpha: float) -> Set[int]:
        """Node ids of all stored events strictly within the scaled radius."""
        return {c[4] for c in self.candidates(query, radius, alpha)}

    def knearest_within(
        self,
        query: Query,
        radius: float,
        alpha: float,
        d_max: int,
        exclude: Optional[int] = None,
        t_max: Optional[int] = None,
        accept: Optional[Callable[[int], bool]] = None,
    ) -> List[int]:
        """The ``d_max`` nearest radius neighbors, ties broken by (t, y, x)."""
        if d_max < 1:
            raise IndexQueryError(f"D_max must be >= 1, got {d_max}")
        pool = (
            c
            for c in self.candidates(query, radius, alpha)
            if c[4] != exclude
            and (t_max is None or c[1] <= t_max)
            and (accept is None or accept(c[4]))
        )
        return [c[4] for c in heapq.nsmallest(d_max, pool)]

    def entries(self, pixel: Tuple[int, int]) -> List[Tuple[int, int, int]]:
        q = self.queue(pixel)
        return q.entries() if q is not None else []

    def check_invariants(self) -> None:
        """Raise AssertionError if the live count or queue ordering is off."""
        total = 0
        for q in self._grid:
            if q is None:
                continue
            assert q.is_sorted(), "pixel queue lost its time order"
            total += len(q)
        assert total == len(self._pixel_of), "live count disagrees with queue lengths"


def radius_search_bruteforce(
    events: Sequence[Event],
    query: Query,
    radius: float,
    alpha: float,
    ids: Optional[Sequence[int]] = None,
) -> Set[int]:
    """Exhaustive scan with the same strict predicate; ids default to positions."""
    x0, y0, t0 = query
    ids = range(len(events)) if ids is None else ids
    return {
        nid
        for nid, e in zip(ids, events)
        if within_radius(e.x - x0, e.y - y0, e.t - t0, radius, alpha)
    }


def knearest_bruteforce(
    events: Sequence[Event],
    query: Query,
    radius: float,
    alpha: float,
    d_max: int,
    ids: Optional[Sequence[int]] = None,
    exclude: Optional[int] = None,
    t_max: Optional[int] = None,
) -> List[int]:
    """Sort-then-truncate reference for knearest_within."""
    x0, y0, t0 = query
    ids = range(len(events)) if ids is None else ids
    ranked = sorted(
        (scaled_sq_distance(e.x - x0, e.y - y0, e.t - t0, alpha), e.t, e.y, e.x, nid)
        for nid, e in zip(ids, events)
        if nid != exclude
        and (t_max is None or e.t <= t_max)
        and within_radius(e.x - x0, e.y - y0, e.t - t0, radius, alpha)
    )
    return [c[4] for c in ranked[:d_max]]
