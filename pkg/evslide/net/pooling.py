"""Voxel pooling and the pooled graph it induces.

Each occupied voxel becomes one pooled node at the centroid of its
members. Pooled nodes are linked by the same capped radius rule as the
event graph, evaluated on centroids. ``PooledGraph.update`` keeps the
pooled graph equal to a from-scratch build while the source nodes change.
"""

import heapq
import logging
import math
from bisect import insort
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import numpy as np

from ..config import SensorGeometry
from ..graph import EventGraph, Topology
from ..models import GraphDelta, Position
from .features import FeatureMap
from .layers import VoxelPool

logger = logging.getLogger(__name__)

Cell = Tuple[int, int, int]


@dataclass(frozen=True)
class VoxelGrid:
    """Voxel partition of (x, y, t); ids sort lexicographically by (t, y, x)."""

    vx: float
    vy: float
    vt: float
    nx: int
    ny: int

    @classmethod
    def for_geometry(
        cls, voxel: Tuple[float, float, float], geometry: SensorGeometry
    ) -> "VoxelGrid":
        vx, vy, vt = voxel
        return cls(
            vx=vx,
            vy=vy,
            vt=vt,
            nx=math.ceil(geometry.width / vx),
            ny=math.ceil(geometry.height / vy),
        )

    def cell(self, pos: Position) -> Tuple[int, int, int]:
        return (
            math.floor(pos[0] / self.vx),
            math.floor(pos[1] / self.vy),
            math.floor(pos[2] / self.vt),
        )

    def voxel_id(self, pos: Position) -> int:
        ix, iy, it = self.cell(pos)
        return (it * self.ny + iy) * self.nx + ix

    def unravel(self, voxel_id: int) -> Tuple[int, int, int]:
        rest, ix = divmod(voxel_id, self.nx)
        it, iy = divmod(rest, self.ny)
        return ix, iy, it


def centroid(members: Iterable[int], position) -> Position:
    """Mean member position, summed in the order given."""
    sx = sy = st = 0.0
    n = 0
    for j in members:
        x, y, t = position(j)
        sx += x
        sy += y
        st += t
        n += 1
    return (sx / n, sy / n, st / n)


def aggregate(rows: np.ndarray, aggr: str) -> np.ndarray:
    """Pool member feature rows (ascending member id order)."""
    if aggr == "max":
        return rows.max(axis=0)
    return rows.sum(axis=0) / rows.shape[0]


@dataclass
class PoolChange:
    """Voxel-level outcome of one source update."""

    v_add: FrozenSet[int] = frozenset()
    v_del: FrozenSet[int] = frozenset()
    regrouped: FrozenSet[int] = frozenset()  # surviving voxels whose member set changed
    delta: GraphDelta = field(default_factory=GraphDelta)
    examined: int = 0


class PooledGraph(Topology):
    """Pooled nodes over one source topology."""

    def __init__(
        self,
        layer: VoxelPool,
        grid: VoxelGrid,
        radius: float,
        alpha: float,
        d_max: int,
        causal: bool = False,
    ):
        self.layer = layer
        self.grid = grid
        self.radius = radius
        self.alpha = alpha
        self.d_max = d_max
        self.causal = causal

        self.members: Dict[int, List[int]] = {}
        self.voxel_of: Dict[int, int] = {}
        self._pos: Dict[int, Position] = {}
        self._cells: Dict[Cell, Set[int]] = {}
        self._in: Dict[int, Tuple[int, ...]] = {}
        self._out: Dict[int, Set[int]] = {}
        self.examined = 0

    @classmethod
    def for_layer(cls, layer: VoxelPool, graph: EventGraph) -> "PooledGraph":
        """Empty pooled graph; radius and D_max fall back to the event graph's."""
        return cls(
            layer=layer,
            grid=VoxelGrid.for_geometry(layer.voxel, graph.geometry),
            radius=layer.radius or graph.radius,
            alpha=graph.alpha,
            d_max=layer.max_degree or graph.d_max,
            causal=graph.causal,
        )

    # -- Topology ---------------------------------------------------------

    def node_ids(self) -> List[int]:
        return sorted(self._pos)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._pos

    def __len__(self) -> int:
        return len(self._pos)

    def position(self, node_id: int) -> Position:
        return self._pos[node_id]

    def in_neighbors(self, node_id: int) -> Tuple[int, ...]:
        return self._in[node_id]

    def out_neighbors(self, node_id: int) -> Set[int]:
        return self._out[node_id]

    # -- radius rule on centroids ------------------------------------------

    def _cell(self, pos: Position) -> Cell:
        r = self.radius
        return (
            math.floor(pos[0] / r),
            math.floor(pos[1] / r),
            math.floor(self.alpha * pos[2] / r),
        )

    def _place(self, pid: int, pos: Position) -> None:
        self._pos[pid] = pos
        self._cells.setdefault(self._cell(pos), set()).add(pid)

    def _unplace(self, pid: int) -> Position:
        pos = self._pos.pop(pid)
        cell = self._cell(pos)
        bucket = self._cells[cell]
        bucket.discard(pid)
        if not bucket:
            del self._cells[cell]
        return pos

    def _candidates(
        self, pos: Position
    ) -> Iterable[Tuple[float, float, float, float, int]]:
        """(d^2, t, y, x, id) of pooled nodes strictly within the radius of ``pos``."""
        cx, cy, ct = self._cell(pos)
        r2 = self.radius * self.radius
        examined = 0
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    bucket = self._cells.get((cx + dx, cy + dy, ct + dz))
                    if not bucket:
                        continue
                    examined += len(bucket)
                    for pid in bucket:
                        x, y, t = self._pos[pid]
                        ex, ey, et = x - pos[0], y - pos[1], t - pos[2]
                        d2 = ex * ex + ey * ey + (self.alpha * et) ** 2
                        if d2 < r2:
                            yield (d2, t, y, x, pid)
        self.examined += examined

    def _query(self, pid: int) -> Tuple[int, ...]:
        pos = self._pos[pid]
        pool = (
            c
            for c in self._candidates(pos)
            if c[4] != pid and (not self.causal or c[1] <= pos[2])
        )
        return tuple(c[4] for c in heapq.nsmallest(self.d_max, pool))

    def _set_neighbors(self, pid: int, neighbors: Tuple[int, ...]) -> None:
        for j in self._in.get(pid, ()):
            if j in self._out:
                self._out[j].discard(pid)
        self._in[pid] = neighbors
        for j in neighbors:
            self._out[j].add(pid)

    # -- construction -----------------------------------------------------

    def build(self, source: Topology) -> "PooledGraph":
        """Populate from scratch over every node of ``source``."""
        for j in source.node_ids():
            pid = self.grid.voxel_id(source.position(j))
            self.voxel_of[j] = pid
            # ascending source ids keep member lists sorted
            self.members.setdefault(pid, []).append(j)
        for pid, members in self.members.items():
            self._place(pid, centroid(members, source.position))
            self._out[pid] = set()
        for pid in self._pos:
            self._in[pid] = ()
        for pid in sorted(self._pos):
            self._set_neighbors(pid, self._query(pid))
        return self

    def update(
        self,
        added: Iterable[int],
        deleted: Iterable[int],
        source: Topology,
        moved: Iterable[int] = (),
    ) -> PoolChange:
        """Apply source-node additions and deletions and repair the pooled graph.

        ``moved`` lists surviving source nodes whose position changed. A moved
        node that crosses a voxel boundary changes voxel; either way its
        voxels get their centroids recomputed.
        """
        examined_before = self.examined
        regrouped: Set[int] = set()
        for j in moved:
            old = self.voxel_of.get(j)
            if old is None:
                continue
            regrouped.add(old)
            pid = self.grid.voxel_id(source.position(j))
            if pid != old:
                self.members[old].remove(j)
                insort(self.members.setdefault(pid, []), j)
                self.voxel_of[j] = pid
                regrouped.add(pid)
        for j in deleted:
            pid = self.voxel_of.pop(j)
            self.members[pid].remove(j)
            regrouped.add(pid)
        for j in added:
            pid = self.grid.voxel_id(source.position(j))
            self.voxel_of[j] = pid
            insort(self.members.setdefault(pid, []), j)
            regrouped.add(pid)

        v_add = {pid for pid in regrouped if pid not in self._pos}
        v_del = {pid for pid in regrouped if pid in self._pos and not self.members[pid]}
        survivors = regrouped - v_add - v_del

        prior_neighbors: Dict[int, Tuple[int, ...]] = {}
        prior_positions: Dict[int, Position] = {}
        requery: Set[int] = set()

        for pid in sorted(v_del):
            del self.members[pid]
            prior_positions[pid] = self._unplace(pid)
            requery |= self._out.pop(pid)
            for k in self._in[pid]:
                if k in self._out:
                    self._out[k].discard(pid)
            prior_neighbors[pid] = self._in.pop(pid)

        moved: Set[int] = set()
        for pid in sorted(survivors):
            pos = centroid(self.members[pid], source.position)
            if pos != self._pos[pid]:
                moved.add(pid)
                prior_positions[pid] = self._unplace(pid)
                self._place(pid, pos)
                requery |= self._out[pid]
                requery.add(pid)

        for pid in sorted(v_add):
            self._place(pid, centroid(self.members[pid], source.position))
            self._out[pid] = set()
            self._in[pid] = ()
            requery.add(pid)

        # survivors that may now reach a new or relocated pooled node
        for pid in v_add | moved:
            requery.update(c[4] for c in self._candidates(self._pos[pid]))
        requery -= v_del

        rewired: Set[int] = set()
        for pid in sorted(requery):
            old = self._in[pid]
            fresh = self._query(pid)
            if fresh != old:
                if pid not in v_add:
                    prior_neighbors[pid] = old
                    rewired.add(pid)
                self._set_neighbors(pid, fresh)

        return PoolChange(
            v_add=frozenset(v_add),
            v_del=frozenset(v_del),
            regrouped=frozenset(survivors),
            delta=GraphDelta(
                rewired=frozenset(rewired),
                prior_neighbors=prior_neighbors,
                moved=frozenset(moved),
                prior_positions=prior_positions,
            ),
            examined=self.examined - examined_before,
        )

    def pooled_feature(self, pid: int, features: FeatureMap) -> np.ndarray:
        return aggregate(features.rows(self.members[pid]), self.layer.aggr)


def voxel_pool_forward(
    source: Topology,
    features: FeatureMap,
    layer: VoxelPool,
    graph: EventGraph,
    pooled: Optional[PooledGraph] = None,
) -> Tuple[PooledGraph, FeatureMap]:
    """Batch voxel pooling: pooled graph plus one aggregated feature per voxel."""
    if pooled is None:
        pooled = PooledGraph.for_layer(layer, graph).build(source)
    out = FeatureMap(features.width, features.dtype, capacity=len(pooled))
    for pid in pooled.node_ids():
        out.put(pid, pooled.pooled_feature(pid, features))
    return pooled, out
