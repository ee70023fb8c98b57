"""Numeric kernels shared by the batch and incremental paths."""

from typing import Callable, Iterable, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from ..graph import edge_attribute
from ..models import Position
from .base import Readout
from .layers import EDGE_DIM, GraphConv


def message(f_j: np.ndarray, e_ij: Sequence[float], layer: GraphConv) -> np.ndarray:
    """W [f_j || e_ij] for one edge."""
    if f_j.shape != (layer.in_dim,) or len(e_ij) != EDGE_DIM:
        raise ShapeError(
            f"message expects features of width {layer.in_dim} "
            f"and {EDGE_DIM} edge attributes, "
            f"got {f_j.shape[0] if f_j.ndim else 0} and {len(e_ij)}"
        )
    x = np.concatenate([f_j, np.asarray(e_ij, dtype=f_j.dtype)])
    return layer.w @ x


def messages(features: np.ndarray, attrs: np.ndarray, layer: GraphConv) -> np.ndarray:
    """Row-wise messages for a batch of edges: features (k, in), attrs (k, 3)."""
    if features.shape[0] == 0:
        return np.zeros((0, layer.out_dim), dtype=layer.w.dtype)
    x = np.concatenate([features, attrs.astype(features.dtype, copy=False)], axis=1)
    return x @ layer.w.T


def scatter_sum(
    base: np.ndarray, targets: np.ndarray, values: np.ndarray
) -> np.ndarray:
    """base[t] += values[k] for every k, applied in row order."""
    out = base.copy()
    # add.at is unbuffered and sequential, so row order is the summation order
    np.add.at(out, targets, values)
    return out


def conv_forward(
    node_ids: Sequence[int],
    edges: Sequence[Tuple[int, int]],
    attrs: np.ndarray,
    features: np.ndarray,
    slot: dict,
    layer: GraphConv,
) -> Tuple[np.ndarray, np.ndarray]:
    """Batch graph convolution over one topology.

    ``edges`` are (source, target) pairs sorted by target then ascending
    source; ``features`` rows are addressed through ``slot``. Returns the
    pre-activation sums and features, rows ordered like ``node_ids``.
    """
    row = {nid: k for k, nid in enumerate(node_ids)}
    s = np.broadcast_to(layer.b, (len(node_ids), layer.out_dim)).copy()
    if len(edges):
        src = np.fromiter((slot[j] for j, _ in edges), dtype=np.intp, count=len(edges))
        dst = np.fromiter((row[i] for _, i in edges), dtype=np.intp, count=len(edges))
        msgs = messages(features[src], attrs, layer)
        s = scatter_sum(s, dst, msgs)
    return s, layer.activate(s)


def readout(features: np.ndarray, mode: Readout) -> Tuple[np.ndarray, bool]:
    """Channelwise mean and/or max; an empty set reads out zeros, flagged degenerate."""
    mode = Readout(mode)
    n, channels = features.shape
    if n == 0:
        return np.zeros(mode.width(channels), dtype=features.dtype), True
    mean = (features.astype(np.float64).sum(axis=0) / n).astype(features.dtype)
    peak = features.max(axis=0)
    if mode is Readout.MEAN:
        return mean, False
    if mode is Readout.MAX:
        return peak, False
    return np.concatenate([mean, peak]), False


def dense_chain(layers: Iterable, x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def edge_attrs(
    pairs: Sequence[Tuple[int, int]],
    position: Callable[[int], Position],
    radius: float,
    alpha: float,
    dtype=np.float64,
) -> np.ndarray:
    """(k, 3) attributes of (source, target) pairs under the given positions."""
    if not pairs:
        return np.zeros((0, EDGE_DIM), dtype=dtype)
    return np.array(
        [edge_attribute(position(j), position(i), radius, alpha) for j, i in pairs],
        dtype=dtype,
    )
