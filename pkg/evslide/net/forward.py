"""Full batch forward pass over an event graph."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..graph import EventGraph, Topology
from ..metrics import Component, FlopMeter
from ..models import Event
from .base import Activation, Readout
from .features import FeatureMap
from .layers import Dense, GraphConv, VoxelPool
from .ops import conv_forward, dense_chain, edge_attrs, readout
from .pooling import PooledGraph, voxel_pool_forward
from .spec import NetworkSpec

logger = logging.getLogger(__name__)

InputEncoder = Callable[[Event], Sequence[float]]


def polarity_features(event: Event) -> Sequence[float]:
    """Default layer-0 input: the polarity as a 1-vector."""
    return (float(event.p),)


@dataclass
class LayerState:
    """Existing nodes of one layer: their topology and features."""

    topology: Topology
    features: FeatureMap


@dataclass
class BatchResult:
    logits: np.ndarray
    state_logit: float
    readout: np.ndarray
    degenerate: bool
    layers: List[LayerState] = field(default_factory=list)
    flops: Dict[str, int] = field(default_factory=dict)

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.logits))

    @property
    def confidence(self) -> float:
        return float(Activation.SIGMOID.apply(np.float64(self.state_logit)))


def input_features(
    graph: EventGraph,
    dtype=np.float64,
    encoder: InputEncoder = polarity_features,
    width: int = 1,
) -> FeatureMap:
    ids = graph.node_ids()
    fm = FeatureMap(width, dtype, capacity=len(ids))
    if ids:
        fm.put_many(ids, np.array([encoder(graph.events[i]) for i in ids], dtype=dtype))
    return fm


def count_head_flops(layers: Sequence[Dense], meter: FlopMeter) -> None:
    for layer in layers:
        meter.add(Component.HEADS, "matvec", layer.out_dim, layer.in_dim)
        meter.add(Component.HEADS, "sum", 2, layer.out_dim)
        meter.add(Component.HEADS, layer.act.value, layer.out_dim)


def evaluate_heads(
    spec: NetworkSpec, vector: np.ndarray, meter: Optional[FlopMeter] = None
):
    """Class logits and the state logit from a readout vector."""
    logits = dense_chain(spec.head, vector)
    state = dense_chain(spec.state_head, vector)
    if meter is not None:
        count_head_flops(spec.head, meter)
        count_head_flops(spec.state_head, meter)
        meter.add(Component.HEADS, "sigmoid", 1)
    return logits, float(state[0])


def count_readout_flops(mode: Readout, n: int, channels: int, meter: FlopMeter) -> None:
    if mode in (Readout.MEAN, Readout.MEAN_MAX):
        meter.add(Component.READOUT, "sum", n, channels)
        meter.add(Component.READOUT, "scale", channels)
    if mode in (Readout.MAX, Readout.MEAN_MAX):
        meter.add(Component.READOUT, "compare", n, channels)


def batch_forward(
    graph: EventGraph,
    spec: NetworkSpec,
    dtype=np.float64,
    encoder: InputEncoder = polarity_features,
    meter: Optional[FlopMeter] = None,
) -> BatchResult:
    """Recompute every layer from scratch on the current window."""
    meter = meter if meter is not None else FlopMeter()
    if spec.dtype != np.dtype(dtype):
        spec = spec.astype(dtype)
    logger.debug("Batch forward over %d nodes", len(graph))
    features = input_features(graph, dtype, encoder, spec.input_dim)
    layers = [LayerState(graph, features)]
    topology: Topology = graph

    for layer in spec.backbone:
        if isinstance(layer, GraphConv):
            ids = topology.node_ids()
            edges = topology.edges()
            attrs = edge_attrs(
                edges, topology.position, topology.radius, topology.alpha, dtype
            )
            s, f = conv_forward(ids, edges, attrs, features.f, features.slot, layer)
            features = FeatureMap(
                layer.out_dim, dtype, preactivation=True, capacity=len(ids)
            )
            if ids:
                features.put_many(ids, f, s)

            meter.add(
                Component.CONV, "message", layer.in_dim, layer.out_dim, times=len(edges)
            )
            meter.add(Component.CONV, "sum", 2, layer.out_dim, times=len(edges))
            if layer.bn is not None:
                meter.add(Component.CONV, "bn", layer.out_dim, times=len(ids))
            meter.add(Component.CONV, layer.act.value, layer.out_dim, times=len(ids))
        elif isinstance(layer, VoxelPool):
            pooled, features = voxel_pool_forward(topology, features, layer, graph)
            topology = pooled
            count_pool_flops(pooled, pooled.node_ids(), meter)
            meter.add(Component.POOL, "distance", pooled.examined)
        layers.append(LayerState(topology, features))

    matrix = features.matrix()
    vector, degenerate = readout(matrix, spec.readout)
    count_readout_flops(spec.readout, matrix.shape[0], matrix.shape[1], meter)
    logits, state_logit = evaluate_heads(spec, vector, meter)

    return BatchResult(
        logits=logits,
        state_logit=state_logit,
        readout=vector,
        degenerate=degenerate,
        layers=layers,
        flops=meter.take(),
    )


def count_pool_flops(pooled: PooledGraph, voxels, meter: FlopMeter) -> None:
    channels = pooled.layer.channels
    for pid in voxels:
        k = len(pooled.members[pid])
        if pooled.layer.aggr == "max":
            meter.add(Component.POOL, "compare", k, channels)
        else:
            meter.add(Component.POOL, "sum", k, channels)
            meter.add(Component.POOL, "scale", channels)
        meter.add(Component.POOL, "sum", k, 3)
        meter.add(Component.POOL, "scale", 3)
