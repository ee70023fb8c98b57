"""Network definition: layer kinds, weights documents and the batch forward pass."""

from .base import Activation, Layer, LayerKind, Readout
from .features import FeatureMap
from .forward import (
    BatchResult,
    InputEncoder,
    LayerState,
    batch_forward,
    evaluate_heads,
    polarity_features,
)
from .layers import EDGE_DIM, BatchNorm, Dense, GraphConv, VoxelPool
from .ops import conv_forward, edge_attrs, message, messages, readout
from .pooling import PoolChange, PooledGraph, VoxelGrid
from .spec import NetworkSpec, load_weights, random_weights, save_weights

__all__ = [
    "Activation",
    "BatchNorm",
    "BatchResult",
    "Dense",
    "EDGE_DIM",
    "FeatureMap",
    "GraphConv",
    "InputEncoder",
    "Layer",
    "LayerKind",
    "LayerState",
    "NetworkSpec",
    "PoolChange",
    "PooledGraph",
    "Readout",
    "VoxelGrid",
    "VoxelPool",
    "batch_forward",
    "conv_forward",
    "edge_attrs",
    "evaluate_heads",
    "load_weights",
    "message",
    "messages",
    "polarity_features",
    "random_weights",
    "readout",
    "save_weights",
]
