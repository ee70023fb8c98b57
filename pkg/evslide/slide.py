"""Incremental slide engine.

Each step slides the event graph, then walks the backbone layer by layer:
a ``ChangeSet`` for layer n is turned into the change set of layer n+1
(``propagate_changeset``) and the cached pre-activation sums of layer n+1
are corrected by message differences (``apply_delta``). The readout is
maintained by ``ReadoutCache`` and the heads are re-evaluated at the end.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from .config import GraphConfig, RunConfig, SensorGeometry
from .errors import ConfigError, TopologyError
from .graph import EdgeFilter, EventGraph, Topology
from .metrics import Component, FlopMeter, StepRecord
from .models import ChangeSet, Edge, Event, Precision
from .net.base import Activation
from .net.features import FeatureMap
from .net.forward import (
    BatchResult,
    InputEncoder,
    LayerState,
    batch_forward,
    count_pool_flops,
    evaluate_heads,
    polarity_features,
)
from .net.layers import GraphConv, VoxelPool
from .net.ops import edge_attrs, messages
from .net.pooling import PooledGraph
from .net.spec import NetworkSpec
from .readout import ReadoutCache

logger = logging.getLogger(__name__)

Snapshot = Dict[int, np.ndarray]

TINY = np.finfo(np.float64).tiny


@dataclass
class SlideState:
    """Per-layer existing nodes, topologies and features plus the readout cache."""

    layers: List[LayerState]
    readout: ReadoutCache
    step: int = 0
    refresh_interval: int = 4096

    @property
    def output(self) -> FeatureMap:
        return self.layers[-1].features


@dataclass
class StepResult:
    logits: np.ndarray
    state_logit: float
    record: StepRecord
    degenerate: bool = False
    refreshed: bool = False

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.logits))

    @property
    def confidence(self) -> float:
        return float(Activation.SIGMOID.apply(np.float64(self.state_logit)))

    def to_record(self) -> dict:
        """One JSON-lines step report."""
        return {
            "step": self.record.step,
            "window": self.record.window,
            "flops": self.record.flops,
            "touched_nodes": self.record.touched_nodes,
            "logits": [float(v) for v in self.logits],
            "state_logit": self.state_logit,
            "breakdown": self.record.breakdown,
            "wall_ns": self.record.wall_ns,
        }


def _gather(rows: List[np.ndarray], width: int, dtype) -> np.ndarray:
    if not rows:
        return np.zeros((0, width), dtype=dtype)
    return np.stack(rows).astype(dtype, copy=False)


def propagate_changeset(
    topology: Topology, source: FeatureMap, target: FeatureMap, changes: ChangeSet
) -> ChangeSet:
    """Change set of a conv layer's output given the change set of its input.

    Added and deleted nodes carry over unchanged. A surviving target is
    updated when an in-edge comes from a changed or relocated source, when
    the edge appeared or vanished, or when the target itself relocated.
    """
    delta = changes.delta
    changed_sources = changes.changed | delta.moved

    candidates: Set[int] = set(delta.rewired) | set(delta.moved)
    for j in changed_sources:
        if j in topology:
            candidates |= topology.out_neighbors(j)
    candidates -= changes.v_add
    candidates -= changes.v_del

    e_up: List[Edge] = []
    for i in sorted(candidates):
        if i not in target:
            raise TopologyError(
                f"delta edge targets node {i}, which this layer does not hold"
            )
        fresh = topology.in_neighbors(i)
        old = delta.prior_neighbors.get(i, fresh)
        fresh_set, old_set = set(fresh), set(old)
        relocated = i in delta.moved
        for j in sorted(fresh_set | old_set):
            if relocated or j in changed_sources or (j in fresh_set) != (j in old_set):
                e_up.append((j, i))

    e_add = [
        (j, i)
        for i in sorted(changes.v_add)
        for j in sorted(topology.in_neighbors(i))
    ]
    e_del = [
        (j, i)
        for i in sorted(changes.v_del)
        for j in sorted(delta.prior_neighbors.get(i, ()))
        if j not in changes.v_del
    ]
    for j, _ in e_add:
        if j not in source:
            raise TopologyError(f"source node {j} has no features at the input layer")

    return ChangeSet(
        v_add=changes.v_add,
        v_del=changes.v_del,
        v_up=frozenset(i for _, i in e_up),
        e_add=frozenset(e_add),
        e_del=frozenset(e_del),
        e_up=frozenset(e_up),
        delta=delta,
    )


def apply_delta(
    layer: GraphConv,
    topology: Topology,
    source: FeatureMap,
    prior_source: Snapshot,
    target: FeatureMap,
    out: ChangeSet,
    meter: Optional[FlopMeter] = None,
) -> Snapshot:
    """Bring ``target`` from time t to t+1 along ``out``.

    ``prior_source`` holds the time-t features of changed input nodes;
    returns the time-t features of the updated and deleted targets.
    """
    delta = out.delta
    dtype = target.dtype
    prior = target.snapshot(out.v_up | out.v_del)

    def prior_position(n: int):
        if n in delta.prior_positions:
            return delta.prior_positions[n]
        return topology.position(n)

    def prior_feature(j: int) -> np.ndarray:
        if j in prior_source:
            return prior_source[j]
        if j not in source:
            raise TopologyError(f"no time-t features for source node {j}")
        return source.feature(j)

    # updated targets: s += sum(new messages) - sum(old messages)
    updated = sorted(out.v_up)
    row = {i: k for k, i in enumerate(updated)}
    old_pairs, new_pairs = [], []
    for j, i in sorted(out.e_up, key=lambda e: (e[1], e[0])):
        if j in delta.prior_neighbors.get(i, topology.in_neighbors(i)):
            old_pairs.append((j, i))
        if j in topology and j in topology.in_neighbors(i):
            new_pairs.append((j, i))

    if updated:
        old_msgs = messages(
            _gather([prior_feature(j) for j, _ in old_pairs], layer.in_dim, dtype),
            edge_attrs(
                old_pairs, prior_position, topology.radius, topology.alpha, dtype
            ),
            layer,
        )
        new_msgs = messages(
            _gather([source.feature(j) for j, _ in new_pairs], layer.in_dim, dtype),
            edge_attrs(
                new_pairs, topology.position, topology.radius, topology.alpha, dtype
            ),
            layer,
        )
        correction = np.zeros((len(updated), layer.out_dim), dtype=dtype)
        if new_pairs:
            np.add.at(correction, [row[i] for _, i in new_pairs], new_msgs)
        if old_pairs:
            np.subtract.at(correction, [row[i] for _, i in old_pairs], old_msgs)
        slots = [target.slot[i] for i in updated]
        s = target.s[slots] + correction
        target.put_many(updated, layer.activate(s), s)

    for i in out.v_del:
        target.drop(i)

    # added targets start from zero: s = b + sum of all their messages
    added = sorted(out.v_add)
    add_edges = sorted(out.e_add, key=lambda e: (e[1], e[0]))
    if added:
        s = np.broadcast_to(layer.b, (len(added), layer.out_dim)).copy()
        if add_edges:
            add_row = {i: k for k, i in enumerate(added)}
            msgs = messages(
                _gather([source.feature(j) for j, _ in add_edges], layer.in_dim, dtype),
                edge_attrs(
                    add_edges, topology.position, topology.radius, topology.alpha, dtype
                ),
                layer,
            )
            np.add.at(s, [add_row[i] for _, i in add_edges], msgs)
        target.put_many(added, layer.activate(s), s)

    if meter is not None:
        n_msgs = len(old_pairs) + len(new_pairs) + len(add_edges)
        recomputed = len(updated) + len(added)
        meter.add(Component.CONV, "message", layer.in_dim, layer.out_dim, times=n_msgs)
        meter.add(Component.CONV, "sum", 2, layer.out_dim, times=n_msgs)
        if layer.bn is not None:
            meter.add(Component.CONV, "bn", layer.out_dim, times=recomputed)
        meter.add(Component.CONV, layer.act.value, layer.out_dim, times=recomputed)
    return prior


def pool_step(
    pooled: PooledGraph,
    source: LayerState,
    target: FeatureMap,
    changes: ChangeSet,
    meter: Optional[FlopMeter] = None,
) -> Tuple[ChangeSet, Snapshot]:
    """Map a source change set through voxel membership; refresh pooled features."""
    change = pooled.update(
        sorted(changes.v_add),
        sorted(changes.v_del),
        source.topology,
        sorted(changes.delta.moved),
    )
    refreshed = {pooled.voxel_of[j] for j in changes.v_up if j in pooled.voxel_of}
    v_up = (set(change.regrouped) | refreshed) - change.v_add - change.v_del

    prior = target.snapshot(v_up | change.v_del)
    for pid in change.v_del:
        target.drop(pid)
    recompute = sorted(change.v_add | v_up)
    for pid in recompute:
        target.put(pid, pooled.pooled_feature(pid, source.features))

    if meter is not None:
        meter.add(Component.POOL, "distance", change.examined)
        count_pool_flops(pooled, recompute, meter)
    return (
        ChangeSet(
            v_add=change.v_add,
            v_del=change.v_del,
            v_up=frozenset(v_up),
            delta=change.delta,
        ),
        prior,
    )


def relative_error(value: np.ndarray, reference: np.ndarray) -> float:
    """max |value - reference| / max(max |reference|, tiny)."""
    value = np.asarray(value, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if value.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(reference))), TINY)
    return float(np.max(np.abs(value - reference))) / scale


@dataclass
class Equivalence:
    """Slide state checked against a batch recomputation of the same window."""

    logit_error: float
    layer_errors: List[float] = field(default_factory=list)
    node_sets_match: bool = True

    @property
    def exact(self) -> bool:
        return (
            self.logit_error == 0.0
            and not any(self.layer_errors)
            and self.node_sets_match
        )

    def within(self, tolerance: float) -> bool:
        return self.node_sets_match and self.logit_error <= tolerance


class SlideEngine:
    """One stream, one writer: graph, per-layer caches and heads."""

    def __init__(
        self,
        spec: NetworkSpec,
        graph_config: GraphConfig,
        geometry: SensorGeometry,
        precision: Precision = Precision.F64,
        refresh_interval: int = 4096,
        encoder: InputEncoder = polarity_features,
        edge_filter: Optional[EdgeFilter] = None,
    ):
        if refresh_interval < 0:
            raise ConfigError(f"refresh interval must be >= 0, got {refresh_interval}")
        self.dtype = Precision(precision).dtype
        self.spec = spec.astype(self.dtype)
        self.encoder = encoder
        self.graph = EventGraph(graph_config, geometry, edge_filter=edge_filter)
        self.meter = FlopMeter()
        self.logits = np.zeros(self.spec.num_classes, dtype=self.dtype)
        self.state_logit = 0.0
        self.degenerate = True
        self.state = SlideState(
            layers=[],
            readout=ReadoutCache(self.spec.readout, self.spec.feature_dim, self.dtype),
            refresh_interval=refresh_interval,
        )
        self._adopt(batch_forward(self.graph, self.spec, self.dtype, self.encoder))

    @classmethod
    def from_config(
        cls,
        config: RunConfig,
        spec: NetworkSpec,
        rate_hz: Optional[float] = None,
        encoder: InputEncoder = polarity_features,
    ) -> "SlideEngine":
        return cls(
            spec,
            config.graph.with_temporal_scale(config.geometry, rate_hz),
            config.geometry,
            precision=config.precision,
            refresh_interval=config.refresh_interval,
            encoder=encoder,
        )

    @property
    def step_count(self) -> int:
        return self.state.step

    def _adopt(self, result: BatchResult) -> None:
        self.state.layers = result.layers
        self.state.readout = ReadoutCache.from_features(
            self.spec.readout, result.layers[-1].features
        )
        self.logits = result.logits
        self.state_logit = result.state_logit
        self.degenerate = result.degenerate

    def warm_start(self, events: Sequence[Event]) -> BatchResult:
        """Load an initial window with one batch pass; no step is counted."""
        self.graph.slide(events)
        return self.refresh()

    def batch(self, meter: Optional[FlopMeter] = None) -> BatchResult:
        """Batch recomputation of the current window (state untouched)."""
        return batch_forward(self.graph, self.spec, self.dtype, self.encoder, meter)

    def refresh(self) -> BatchResult:
        """Replace every cache with a from-scratch recomputation."""
        result = self.batch()
        self._adopt(result)
        logger.debug(
            "Refreshed caches at step %d (%d nodes)", self.state.step, len(self.graph)
        )
        return result

    def evaluate(self) -> Tuple[np.ndarray, float]:
        """Re-evaluate both heads on the cached readout."""
        vector, self.degenerate = self.state.readout.vector()
        self.logits, self.state_logit = evaluate_heads(self.spec, vector, self.meter)
        return self.logits, self.state_logit

    def step(self, incoming: Sequence[Event], evaluate: bool = True) -> StepResult:
        """Slide ``incoming`` into the window and update the outputs."""
        start = time.perf_counter_ns()
        examined = self.graph.index.examined
        changes = self.graph.slide(incoming)
        searched = self.graph.index.examined - examined
        self.meter.add(Component.GRAPH, "distance", searched)
        touched = changes.touched

        inputs = self.state.layers[0].features
        prior = inputs.snapshot(changes.v_del)
        for i in changes.v_del:
            inputs.drop(i)
        added = sorted(changes.v_add)
        if added:
            inputs.put_many(
                added,
                np.array(
                    [self.encoder(self.graph.events[i]) for i in added],
                    dtype=self.dtype,
                ),
            )

        for k, layer in enumerate(self.spec.backbone):
            below, above = self.state.layers[k], self.state.layers[k + 1]
            if isinstance(layer, GraphConv):
                changes = propagate_changeset(
                    below.topology, below.features, above.features, changes
                )
                prior = apply_delta(
                    layer,
                    below.topology,
                    below.features,
                    prior,
                    above.features,
                    changes,
                    self.meter,
                )
            elif isinstance(layer, VoxelPool):
                changes, prior = pool_step(
                    above.topology, below, above.features, changes, self.meter
                )
            touched += changes.touched

        output = self.state.output
        removed = [prior[i] for i in sorted(changes.v_del | changes.v_up)]
        fresh = [output.feature(i) for i in sorted(changes.v_add | changes.v_up)]
        self.state.readout.update(removed, fresh, output, self.meter)
        self.state.step += 1

        refreshed = False
        interval = self.state.refresh_interval
        if interval and self.state.step % interval == 0:
            refresh_meter = FlopMeter()
            result = batch_forward(
                self.graph, self.spec, self.dtype, self.encoder, refresh_meter
            )
            self._adopt(result)
            self.meter.add_raw(Component.REFRESH, sum(result.flops.values()))
            refreshed = True
        elif evaluate:
            self.evaluate()

        breakdown = self.meter.take()
        record = StepRecord(
            step=self.state.step,
            events=len(incoming),
            window=len(self.graph),
            flops=sum(breakdown.values()),
            breakdown=breakdown,
            touched_nodes=touched,
            wall_ns=time.perf_counter_ns() - start,
        )
        logger.debug(
            "step %d: %d touched, %d flops", record.step, touched, record.flops
        )
        return StepResult(
            logits=self.logits.copy(),
            state_logit=self.state_logit,
            record=record,
            degenerate=self.degenerate,
            refreshed=refreshed,
        )

    def run(self, events: Sequence[Event], mini_batch: int = 1) -> Iterator[StepResult]:
        """Step through ``events`` in chunks of ``mini_batch``."""
        if mini_batch < 1:
            raise ConfigError(f"mini-batch size must be >= 1, got {mini_batch}")
        for lo in range(0, len(events), mini_batch):
            yield self.step(events[lo : lo + mini_batch])

    def compare(self, reference: Optional[BatchResult] = None) -> Equivalence:
        """Check logits and every layer's features against a batch recomputation."""
        reference = reference or self.batch()
        errors = []
        sets_match = True
        for mine, theirs in zip(self.state.layers, reference.layers):
            if mine.features.ids() != theirs.features.ids():
                sets_match = False
                errors.append(float("inf"))
                continue
            errors.append(
                relative_error(mine.features.matrix(), theirs.features.matrix())
            )
        return Equivalence(
            logit_error=relative_error(self.logits, reference.logits),
            layer_errors=errors,
            node_sets_match=sets_match,
        )
