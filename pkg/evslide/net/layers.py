"""Concrete layer kinds."""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..errors import ShapeError
from .base import Activation, Layer, LayerKind

EDGE_DIM = 3  # (dx, dy, alpha*dt) / R


@dataclass(frozen=True, eq=False)
class BatchNorm:
    """Inference-mode normalization with stored statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, n: int, dtype=np.float64) -> "BatchNorm":
        # eps = 0 keeps the map exactly the identity
        return cls(
            gamma=np.ones(n, dtype),
            beta=np.zeros(n, dtype),
            mean=np.zeros(n, dtype),
            var=np.ones(n, dtype),
            eps=0.0,
        )

    @property
    def width(self) -> int:
        return self.gamma.shape[0]

    def apply(self, s: np.ndarray) -> np.ndarray:
        return (s - self.mean) / np.sqrt(self.var + self.eps) * self.gamma + self.beta

    def astype(self, dtype) -> "BatchNorm":
        return replace(
            self,
            gamma=self.gamma.astype(dtype),
            beta=self.beta.astype(dtype),
            mean=self.mean.astype(dtype),
            var=self.var.astype(dtype),
        )


@dataclass(frozen=True, eq=False)
class GraphConv(Layer):
    """s(i) = b + sum_j W [f(j) || e_ji];  f(i) = act(bn(s(i)))."""

    w: np.ndarray  # (out, in + 3)
    b: np.ndarray
    bn: Optional[BatchNorm] = None
    act: Activation = Activation.ELU
    kind: LayerKind = field(default=LayerKind.GRAPH_CONV, init=False)

    def __post_init__(self):
        if self.w.ndim != 2 or self.w.shape[1] <= EDGE_DIM:
            raise ShapeError(
                f"graph_conv weight must be (out, in + {EDGE_DIM}), got {self.w.shape}"
            )
        if self.b.shape != (self.w.shape[0],):
            raise ShapeError(
                f"graph_conv bias has {self.b.shape[0]} entries, "
                f"weight has {self.w.shape[0]} rows"
            )
        if self.bn is not None and self.bn.width != self.w.shape[0]:
            raise ShapeError(
                f"batch norm width {self.bn.width} != conv output {self.w.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.w.shape[1] - EDGE_DIM

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    def activate(self, s: np.ndarray) -> np.ndarray:
        z = self.bn.apply(s) if self.bn is not None else s
        return self.act.apply(z)

    def astype(self, dtype) -> "GraphConv":
        return replace(
            self,
            w=self.w.astype(dtype),
            b=self.b.astype(dtype),
            bn=self.bn.astype(dtype) if self.bn is not None else None,
        )

    def to_document(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "kind": self.kind.value,
            "w": self.w.tolist(),
            "b": self.b.tolist(),
            "act": self.act.value,
        }
        if self.bn is not None:
            doc["bn"] = {
                "gamma": self.bn.gamma.tolist(),
                "beta": self.bn.beta.tolist(),
                "mean": self.bn.mean.tolist(),
                "var": self.bn.var.tolist(),
                "eps": self.bn.eps,
            }
        return doc


@dataclass(frozen=True)
class VoxelPool(Layer):
    """Cluster nodes per voxel; one pooled node at the members' centroid."""

    voxel: Tuple[float, float, float]  # (vx, vy, vt), t in microseconds
    aggr: str = "mean"
    radius: Optional[float] = None  # pooled-graph radius; None = event graph radius
    max_degree: Optional[int] = None
    channels: int = 0
    kind: LayerKind = field(default=LayerKind.VOXEL_POOL, init=False)

    def __post_init__(self):
        if len(self.voxel) != 3 or min(self.voxel) <= 0:
            raise ShapeError(
                f"voxel sizes must be three positive numbers, got {self.voxel}"
            )
        if self.aggr not in ("mean", "max"):
            raise ShapeError(
                f"voxel_pool aggregation must be mean or max, got {self.aggr!r}"
            )

    @property
    def in_dim(self) -> int:
        return self.channels

    @property
    def out_dim(self) -> int:
        return self.channels

    def astype(self, dtype) -> "VoxelPool":
        return self

    def to_document(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "kind": self.kind.value,
            "voxel": list(self.voxel),
            "aggr": self.aggr,
        }
        if self.radius is not None:
            doc["radius"] = self.radius
        if self.max_degree is not None:
            doc["max_degree"] = self.max_degree
        return doc


@dataclass(frozen=True, eq=False)
class Dense(Layer):
    """y = act(W x + b)."""

    w: np.ndarray  # (out, in)
    b: np.ndarray
    act: Activation = Activation.IDENTITY
    kind: LayerKind = field(default=LayerKind.DENSE, init=False)

    def __post_init__(self):
        if self.w.ndim != 2:
            raise ShapeError(f"dense weight must be a matrix, got shape {self.w.shape}")
        if self.b.shape != (self.w.shape[0],):
            raise ShapeError(
                f"dense bias has {self.b.shape[0]} entries, "
                f"weight has {self.w.shape[0]} rows"
            )

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.act.apply(self.w @ x + self.b)

    def astype(self, dtype) -> "Dense":
        return replace(self, w=self.w.astype(dtype), b=self.b.astype(dtype))

    def to_document(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "w": self.w.tolist(),
            "b": self.b.tolist(),
            "act": self.act.value,
        }
