"""Network specification and the weights JSON document."""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import ShapeError, WeightsError
from .base import Activation, Layer, LayerKind, Readout
from .layers import EDGE_DIM, BatchNorm, Dense, GraphConv, VoxelPool

logger = logging.getLogger(__name__)

BackboneLayer = Union[GraphConv, VoxelPool]


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Backbone of graph layers, one readout, a class head and a state head."""

    backbone: Tuple[BackboneLayer, ...]
    readout: Readout
    head: Tuple[Dense, ...]
    state_head: Tuple[Dense, ...]
    input_dim: int = 1

    def __post_init__(self):
        width = self.input_dim
        for k, layer in enumerate(self.backbone):
            if layer.in_dim != width:
                raise ShapeError(
                    f"backbone layer {k} ({layer.kind.value}) expects {layer.in_dim} "
                    f"input channels but receives {width}"
                )
            width = layer.out_dim

        for name, chain in (("head", self.head), ("state_head", self.state_head)):
            if not chain:
                raise ShapeError(f"{name} needs at least one dense layer")
            dim = self.readout.width(width)
            for k, layer in enumerate(chain):
                if layer.in_dim != dim:
                    raise ShapeError(
                        f"{name} layer {k} input dim {layer.in_dim} does not match "
                        f"{'readout output' if k == 0 else 'previous layer'} dim {dim}"
                    )
                dim = layer.out_dim
        if self.state_head[-1].out_dim != 1:
            raise ShapeError(
                f"state head must end in 1 output, got {self.state_head[-1].out_dim}"
            )

    @property
    def feature_dim(self) -> int:
        """Width of the last backbone layer."""
        return self.backbone[-1].out_dim if self.backbone else self.input_dim

    @property
    def dtype(self) -> np.dtype:
        return self.head[0].w.dtype

    @property
    def num_classes(self) -> int:
        return self.head[-1].out_dim

    @property
    def depth(self) -> int:
        return sum(1 for layer in self.backbone if isinstance(layer, GraphConv))

    def astype(self, dtype) -> "NetworkSpec":
        return replace(
            self,
            backbone=tuple(layer.astype(dtype) for layer in self.backbone),
            head=tuple(layer.astype(dtype) for layer in self.head),
            state_head=tuple(layer.astype(dtype) for layer in self.state_head),
        )

    def describe(self) -> str:
        parts = [layer.describe() for layer in self.backbone]
        parts.append(f"readout({self.readout.value})")
        parts += [layer.describe() for layer in self.head]
        return " -> ".join(parts)

    def to_document(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [layer.to_document() for layer in self.backbone],
            "readout": self.readout.value,
            "head": [layer.to_document() for layer in self.head],
            "state_head": [layer.to_document() for layer in self.state_head],
        }


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class BatchNormDocument(_Document):
    gamma: List[float]
    beta: List[float]
    mean: List[float]
    var: List[float]
    eps: float = Field(1e-5, ge=0)


class LayerDocument(_Document):
    kind: LayerKind
    w: Optional[List[List[float]]] = None
    b: Optional[List[float]] = None
    bn: Optional[BatchNormDocument] = None
    act: Optional[Activation] = None
    voxel: Optional[Tuple[float, float, float]] = None
    aggr: Literal["mean", "max"] = "mean"
    radius: Optional[float] = Field(None, gt=0)
    max_degree: Optional[int] = Field(None, ge=1)


class WeightsDocument(_Document):
    input_dim: int = Field(1, ge=1)
    layers: List[LayerDocument]
    readout: Readout = Readout.MEAN_MAX
    head: List[LayerDocument]
    state_head: List[LayerDocument]


def _matrix(doc: LayerDocument, where: str) -> Tuple[np.ndarray, np.ndarray]:
    if doc.w is None or doc.b is None:
        raise WeightsError(f"{where}: {doc.kind.value} layer needs both 'w' and 'b'")
    rows = {len(r) for r in doc.w}
    if len(rows) > 1:
        raise WeightsError(
            f"{where}: ragged weight matrix (row lengths {sorted(rows)})"
        )
    return np.asarray(doc.w, dtype=np.float64), np.asarray(doc.b, dtype=np.float64)


def _dense(doc: LayerDocument, where: str) -> Dense:
    if doc.kind is not LayerKind.DENSE:
        raise WeightsError(f"{where}: expected a dense layer, got {doc.kind.value}")
    w, b = _matrix(doc, where)
    return Dense(w=w, b=b, act=doc.act or Activation.IDENTITY)


def spec_from_document(doc: WeightsDocument) -> NetworkSpec:
    backbone: List[BackboneLayer] = []
    width = doc.input_dim
    for k, layer in enumerate(doc.layers):
        where = f"layers[{k}]"
        if layer.kind is LayerKind.GRAPH_CONV:
            w, b = _matrix(layer, where)
            bn = None
            if layer.bn is not None:
                bn = BatchNorm(
                    gamma=np.asarray(layer.bn.gamma, dtype=np.float64),
                    beta=np.asarray(layer.bn.beta, dtype=np.float64),
                    mean=np.asarray(layer.bn.mean, dtype=np.float64),
                    var=np.asarray(layer.bn.var, dtype=np.float64),
                    eps=layer.bn.eps,
                )
                widths = {v.shape[0] for v in (bn.gamma, bn.beta, bn.mean, bn.var)}
                if len(widths) != 1:
                    raise WeightsError(f"{where}: batch norm vectors differ in length")
            conv = GraphConv(w=w, b=b, bn=bn, act=layer.act or Activation.ELU)
            backbone.append(conv)
            width = conv.out_dim
        elif layer.kind is LayerKind.VOXEL_POOL:
            if layer.voxel is None:
                raise WeightsError(f"{where}: voxel_pool layer needs 'voxel'")
            backbone.append(
                VoxelPool(
                    voxel=tuple(layer.voxel),
                    aggr=layer.aggr,
                    radius=layer.radius,
                    max_degree=layer.max_degree,
                    channels=width,
                )
            )
        else:
            raise WeightsError(
                f"{where}: dense layers belong in 'head' or 'state_head'"
            )

    return NetworkSpec(
        backbone=tuple(backbone),
        readout=doc.readout,
        head=tuple(_dense(d, f"head[{k}]") for k, d in enumerate(doc.head)),
        state_head=tuple(
            _dense(d, f"state_head[{k}]") for k, d in enumerate(doc.state_head)
        ),
        input_dim=doc.input_dim,
    )


def load_weights(source: Union[str, bytes, Path, IO]) -> NetworkSpec:
    """Parse and validate a weights JSON document (text, bytes, path or file)."""
    if isinstance(source, Path):
        text = source.read_text()
    elif isinstance(source, (str, bytes)):
        text = source
    else:
        text = source.read()

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise WeightsError(f"weights document is not valid JSON: {e}") from e
    try:
        doc = WeightsDocument.model_validate(raw)
    except ValidationError as e:
        raise WeightsError(f"invalid weights document:\n{e}") from e

    try:
        spec = spec_from_document(doc)
    except ShapeError as e:
        raise WeightsError(str(e)) from e
    logger.info("Loaded network %s", spec.describe())
    return spec


def save_weights(spec: NetworkSpec, path: Optional[Path] = None) -> str:
    text = json.dumps(spec.to_document())
    if path is not None:
        Path(path).write_text(text)
    return text


def random_weights(
    widths: Sequence[int],
    seed: int = 0,
    num_classes: int = 10,
    readout: Readout = Readout.MEAN_MAX,
    state_hidden: Optional[int] = None,
    preset: Literal["plain", "pooled"] = "plain",
    pool_after: Optional[int] = None,
    voxel: Tuple[float, float, float] = (4.0, 4.0, 10_000.0),
    pool_aggr: Literal["mean", "max"] = "mean",
    pool_radius: Optional[float] = None,
    pool_max_degree: Optional[int] = None,
) -> NetworkSpec:
    """Deterministic weights uniform in [-1, 1] with identity batch norm.

    ``widths[0]`` is the input width and every further entry adds a conv
    layer. The "pooled" preset inserts a voxel pool after conv layer
    ``pool_after`` (default: the middle one).
    """
    if not widths or min(widths) < 1:
        raise ShapeError(f"layer widths must be >= 1, got {list(widths)}")
    rng = np.random.default_rng(seed)
    readout = Readout(readout)

    def uniform(*shape):
        return rng.uniform(-1.0, 1.0, size=shape)

    convs = [
        GraphConv(
            w=uniform(out_dim, in_dim + EDGE_DIM),
            b=uniform(out_dim),
            bn=BatchNorm.identity(out_dim),
            act=Activation.ELU,
        )
        for in_dim, out_dim in zip(widths[:-1], widths[1:])
    ]

    backbone: List[Layer] = list(convs)
    if preset == "pooled":
        if not convs:
            raise ShapeError("the pooled preset needs at least one conv layer")
        at = (len(convs) - 1) // 2 if pool_after is None else pool_after
        if not 0 <= at < len(convs):
            raise ShapeError(f"pool_after={at} is outside the {len(convs)} conv layers")
        backbone.insert(
            at + 1,
            VoxelPool(
                voxel=tuple(voxel),
                aggr=pool_aggr,
                radius=pool_radius,
                max_degree=pool_max_degree,
                channels=convs[at].out_dim,
            ),
        )

    features = readout.width(widths[-1])
    head = (Dense(w=uniform(num_classes, features), b=uniform(num_classes)),)
    if state_hidden:
        state_head = (
            Dense(
                w=uniform(state_hidden, features),
                b=uniform(state_hidden),
                act=Activation.ELU,
            ),
            Dense(w=uniform(1, state_hidden), b=uniform(1)),
        )
    else:
        state_head = (Dense(w=uniform(1, features), b=uniform(1)),)

    return NetworkSpec(
        backbone=tuple(backbone),
        readout=readout,
        head=head,
        state_head=state_head,
        input_dim=widths[0],
    )
