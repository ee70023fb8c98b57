"""Sliding-window radius-neighborhood event graph."""

import json
import logging
from abc import ABC, abstractmethod
from collections import deque
from itertools import chain, islice
from pathlib import Path
from typing import Callable, Deque, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .config import GraphConfig, SensorGeometry, WindowSpec
from .errors import ConfigError, DuplicateTimestampError, OutOfOrderError, TopologyError
from .events import validate_event
from .models import ChangeSet, EdgeMode, Event, GraphDelta, Position
from .pixel_index import PixelQueueIndex

logger = logging.getLogger(__name__)

# (graph, source, target) -> keep edge; hook for surface-aware edge filters
EdgeFilter = Callable[["EventGraph", int, int], bool]


def edge_attribute(
    src: Position, dst: Position, radius: float, alpha: float
) -> Tuple[float, float, float]:
    """Relative coordinates of ``src`` seen from ``dst``, scaled by 1/R."""
    return (
        (src[0] - dst[0]) / radius,
        (src[1] - dst[1]) / radius,
        alpha * (src[2] - dst[2]) / radius,
    )


class Topology(ABC):
    """Node positions and capped in-neighbor lists of one network layer."""

    radius: float
    alpha: float

    @abstractmethod
    def node_ids(self) -> List[int]:
        """Live node ids in ascending order."""

    @abstractmethod
    def __contains__(self, node_id: int) -> bool:
        ...

    @abstractmethod
    def __len__(self) -> int:
        ...

    @abstractmethod
    def position(self, node_id: int) -> Position:
        ...

    @abstractmethod
    def in_neighbors(self, node_id: int) -> Tuple[int, ...]:
        """Neighbor list in ranking order (nearest first)."""

    @abstractmethod
    def out_neighbors(self, node_id: int) -> Set[int]:
        ...

    def edge_attr(self, src: int, dst: int) -> Tuple[float, float, float]:
        return edge_attribute(
            self.position(src), self.position(dst), self.radius, self.alpha
        )

    def edges(self) -> List[Tuple[int, int]]:
        """All (source, target) pairs, ordered by target then source."""
        return [(j, i) for i in self.node_ids() for j in sorted(self.in_neighbors(i))]

    def neighbor_lists(self) -> Dict[int, Tuple[int, ...]]:
        return {i: self.in_neighbors(i) for i in self.node_ids()}


def window_membership(
    window: WindowSpec,
    entries: Iterable[Tuple[int, int]],
    now: Optional[int] = None,
    size: Optional[int] = None,
) -> List[int]:
    """Node ids to evict from an oldest-first stream of (node id, t).

    by_time evicts every t <= now - window (now defaults to the newest t);
    by_count evicts the oldest entries until at most ``by_count`` remain.
    Passing ``now`` / ``size`` lets callers hand over a lazy iterator.
    """
    if window.by_count is not None:
        if size is None:
            entries = list(entries)
            size = len(entries)
        excess = max(size - window.by_count, 0)
        return [nid for nid, _ in islice(entries, excess)]

    if now is None:
        entries = list(entries)
        if not entries:
            return []
        now = entries[-1][1]
    cutoff = now - window.by_time_us
    evicted = []
    for nid, t in entries:
        if t > cutoff:
            break
        evicted.append(nid)
    return evicted


class EventGraph(Topology):
    """Window of events with D_max-capped radius-neighborhood in-lists.

    Node ids are 0-based stream positions and are never reused. The graph is
    a pure function of the window contents; ``slide`` keeps it that way.
    """

    def __init__(
        self,
        config: GraphConfig,
        geometry: SensorGeometry,
        edge_filter: Optional[EdgeFilter] = None,
    ):
        if config.temporal_scale is None:
            raise ConfigError("graph needs a resolved temporal_scale")
        self.config = config
        self.geometry = geometry
        self.radius = config.radius
        self.alpha = config.alpha
        self.d_max = config.max_degree
        self.causal = config.edge_mode is EdgeMode.CAUSAL
        self.edge_filter = edge_filter

        self.index = PixelQueueIndex(geometry)
        self.events: Dict[int, Event] = {}
        self._in: Dict[int, Tuple[int, ...]] = {}
        self._out: Dict[int, Set[int]] = {}
        self._window: Deque[int] = deque()
        self.next_id = 0

    # -- Topology ---------------------------------------------------------

    def node_ids(self) -> List[int]:
        # FIFO order is ascending id order
        return list(self._window)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.events

    def __len__(self) -> int:
        return len(self.events)

    def position(self, node_id: int) -> Position:
        return self.events[node_id].position

    def in_neighbors(self, node_id: int) -> Tuple[int, ...]:
        return self._in[node_id]

    def out_neighbors(self, node_id: int) -> Set[int]:
        return self._out[node_id]

    # -- construction -----------------------------------------------------

    @property
    def newest_t(self) -> Optional[int]:
        return self.events[self._window[-1]].t if self._window else None

    def _query(self, node_id: int) -> Tuple[int, ...]:
        e = self.events[node_id]
        accept = None
        if self.edge_filter is not None:

            def accept(j: int) -> bool:
                return self.edge_filter(self, j, node_id)

        return tuple(
            self.index.knearest_within(
                (e.x, e.y, e.t),
                self.radius,
                self.alpha,
                self.d_max,
                exclude=node_id,
                t_max=e.t if self.causal else None,
                accept=accept,
            )
        )

    def _set_neighbors(self, node_id: int, neighbors: Tuple[int, ...]) -> None:
        for j in self._in.get(node_id, ()):
            if j in self._out:
                self._out[j].discard(node_id)
        self._in[node_id] = neighbors
        for j in neighbors:
            self._out[j].add(node_id)

    def _add_node(self, node_id: int, event: Event) -> None:
        self.index.insert(event, node_id)
        self.events[node_id] = event
        self._out[node_id] = set()
        self._window.append(node_id)

    def _validate_incoming(self, incoming: Sequence[Event]) -> None:
        last = self.newest_t
        for e in incoming:
            validate_event(e, self.geometry)
            if last is not None and e.t < last:
                raise OutOfOrderError(f"incoming t={e.t} precedes window t={last}")
            last = e.t

    def _check_duplicates(self, inserted: Sequence[Event], evicted: Set[int]) -> None:
        """Reject (pixel, t) pairs held by a survivor or repeated in the batch."""
        newest: Dict[Tuple[int, int], Optional[int]] = {}
        for e in inserted:
            if e.pixel not in newest:
                q = self.index.queue(e.pixel)
                stored = q.newest if q is not None else None
                # queues are time-sorted: an evicted newest entry means all are evicted
                alive = stored is not None and stored[1] not in evicted
                newest[e.pixel] = stored[0] if alive else None
            if newest[e.pixel] == e.t:
                raise DuplicateTimestampError(e.x, e.y, e.t)
            newest[e.pixel] = e.t

    def slide(self, incoming: Sequence[Event]) -> ChangeSet:
        """Slide new events in and expired ones out; returns the layer-0 change set."""
        self._validate_incoming(incoming)

        first = self.next_id
        n_old = len(self._window)
        newest = incoming[-1].t if incoming else self.newest_t
        entries = chain(
            ((nid, self.events[nid].t) for nid in self._window),
            ((first + k, e.t) for k, e in enumerate(incoming)),
        )
        evict = window_membership(
            self.config.window, entries, now=newest, size=n_old + len(incoming)
        )
        cut = len(evict)

        # incoming events that expire within this same slide are never inserted
        v_del = evict[:n_old]
        skipped = max(cut - n_old, 0)
        # last check before anything mutates: a rejected slide changes nothing
        self._check_duplicates(incoming[skipped:], set(v_del))
        self.next_id += len(incoming)

        prior_neighbors: Dict[int, Tuple[int, ...]] = {}
        prior_positions: Dict[int, Position] = {}
        requery: Set[int] = set()

        for j in v_del:
            e = self.events[j]
            head = self.index.remove_oldest(e.pixel)
            if head is None or head[1] != j:
                raise TopologyError(
                    f"node {j} is not the oldest entry at pixel {e.pixel}"
                )
            if self._window.popleft() != j:
                raise TopologyError(f"node {j} is not the oldest window entry")
            requery |= self._out.pop(j)
            for k in self._in[j]:
                if k in self._out:
                    self._out[k].discard(j)
            prior_neighbors[j] = self._in.pop(j)
            prior_positions[j] = e.position
            del self.events[j]
        requery -= set(v_del)

        added = []
        for k in range(skipped, len(incoming)):
            nid = first + k
            self._add_node(nid, incoming[k])
            added.append(nid)

        for nid in added:
            self._in[nid] = ()
        for nid in added:
            self._set_neighbors(nid, self._query(nid))

        # survivors that a new node displaces from (or enters) their top-D_max
        new_set = set(added)
        for nid in added:
            e = self.events[nid]
            for c in self.index.candidates((e.x, e.y, e.t), self.radius, self.alpha):
                i = c[4]
                if i in new_set or i in requery:
                    continue
                target = self.events[i]
                if self.causal and e.t > target.t:
                    continue
                current = self._in[i]
                if len(current) < self.d_max or self._ranks_before(nid, current[-1], i):
                    requery.add(i)

        rewired = set()
        for i in sorted(requery):
            old = self._in[i]
            fresh = self._query(i)
            if fresh != old:
                prior_neighbors[i] = old
                rewired.add(i)
                self._set_neighbors(i, fresh)

        logger.debug(
            "slide: +%d -%d rewired=%d window=%d",
            len(added),
            len(v_del),
            len(rewired),
            len(self),
        )
        return ChangeSet(
            v_add=frozenset(added),
            v_del=frozenset(v_del),
            delta=GraphDelta(
                rewired=frozenset(rewired),
                prior_neighbors=prior_neighbors,
                prior_positions=prior_positions,
            ),
        )

    def _rank_key(self, j: int, i: int) -> Tuple[float, int, int, int]:
        a, b = self.events[j], self.events[i]
        dx, dy, dt = a.x - b.x, a.y - b.y, a.t - b.t
        return (dx * dx + dy * dy + (self.alpha * dt) ** 2, a.t, a.y, a.x)

    def _ranks_before(self, j: int, k: int, i: int) -> bool:
        """Whether j would rank ahead of k in i's neighbor list."""
        return self._rank_key(j, i) < self._rank_key(k, i)

    def max_in_degree(self) -> int:
        return max((len(n) for n in self._in.values()), default=0)


def build_graph(
    events: Sequence[Event],
    config: GraphConfig,
    geometry: SensorGeometry,
    first_id: int = 0,
    edge_filter: Optional[EdgeFilter] = None,
) -> EventGraph:
    """From-scratch construction over one window's events (stream order)."""
    graph = EventGraph(config, geometry, edge_filter=edge_filter)
    graph.next_id = first_id
    last = None
    for k, e in enumerate(events):
        validate_event(e, geometry)
        if last is not None and e.t < last:
            raise OutOfOrderError(f"event {k} has t={e.t} after t={last}")
        last = e.t
        graph._add_node(first_id + k, e)
    graph.next_id = first_id + len(events)
    for nid in graph.node_ids():
        graph._in[nid] = ()
    for nid in graph.node_ids():
        graph._set_neighbors(nid, graph._query(nid))
    return graph


def window_contents(graph: EventGraph) -> Tuple[List[Event], int]:
    """Events currently in the window and the id of the oldest one."""
    ids = graph.node_ids()
    return [graph.events[i] for i in ids], (ids[0] if ids else graph.next_id)


def rebuild(graph: EventGraph) -> EventGraph:
    """From-scratch graph over the same window, for determinism checks."""
    events, first = window_contents(graph)
    fresh = build_graph(events, graph.config, graph.geometry, first, graph.edge_filter)
    fresh.next_id = graph.next_id
    return fresh


def same_topology(a: Topology, b: Topology) -> bool:
    return a.node_ids() == b.node_ids() and a.neighbor_lists() == b.neighbor_lists()


def dump_graph(graph: EventGraph, path: Optional[Path] = None) -> dict:
    """Debug dump: nodes [{id,x,y,t,p}] and edges [{src,dst,attr}]."""
    doc = {
        "nodes": [
            {"id": i, "x": e.x, "y": e.y, "t": e.t, "p": e.p}
            for i, e in ((i, graph.events[i]) for i in graph.node_ids())
        ],
        "edges": [
            {"src": j, "dst": i, "attr": list(graph.edge_attr(j, i))}
            for j, i in graph.edges()
        ],
    }
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=1))
    return doc


def load_graph_dump(source: Path) -> Tuple[Dict[int, Event], List[Tuple[int, int]]]:
    """Read a debug dump back into (events by id, edges)."""
    doc = json.loads(Path(source).read_text())
    events = {n["id"]: Event(n["x"], n["y"], n["t"], n["p"]) for n in doc["nodes"]}
    edges = [(e["src"], e["dst"]) for e in doc["edges"]]
    return events, edges

