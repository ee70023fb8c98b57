"""Data models for evslide."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import FrozenSet, Mapping, Tuple

import numpy as np

# (x, y, t) of a graph node; t stays in microseconds, scaling happens in
# distance and attribute computations.
Position = Tuple[float, float, float]
Edge = Tuple[int, int]  # (source, target)


class EventFormat(str, Enum):
    """On-disk event stream formats."""
    CSV = "csv"
    EVT1 = "evt1"

    @classmethod
    def from_suffix(cls, suffix: str) -> "EventFormat":
        suffix = suffix.lower().lstrip(".")
        if suffix == "csv":
            return cls.CSV
        if suffix in ("evt1", "evt", "bin"):
            return cls.EVT1
        raise ValueError(f"cannot infer event format from suffix '.{suffix}'")


class EdgeMode(str, Enum):
    """Which radius-neighbors may become in-neighbors."""
    SYMMETRIC = "symmetric"
    CAUSAL = "causal"  # only neighbors with t_j <= t_i


class Precision(str, Enum):
    """Floating point width of features and accumulators."""
    F32 = "f32"
    F64 = "f64"

    @property
    def dtype(self) -> type:
        return np.float32 if self is Precision.F32 else np.float64


@dataclass(frozen=True, slots=True)
class Event:
    """One asynchronous brightness-change record."""

    x: int
    y: int
    t: int  # microseconds
    p: int  # -1 or +1

    @property
    def pixel(self) -> Tuple[int, int]:
        return (self.x, self.y)

    @property
    def position(self) -> Position:
        return (float(self.x), float(self.y), float(self.t))


_EMPTY: Mapping = MappingProxyType({})


@dataclass(frozen=True)
class GraphDelta:
    """How the graph among one layer's nodes changed during a slide.

    ``prior_neighbors`` holds the in-lists at time t for every deleted node
    and every surviving node whose list changed (``rewired``).
    ``prior_positions`` holds positions at time t for deleted and moved nodes.
    """

    rewired: FrozenSet[int] = frozenset()
    prior_neighbors: Mapping[int, Tuple[int, ...]] = field(
        default_factory=lambda: _EMPTY
    )
    moved: FrozenSet[int] = frozenset()
    prior_positions: Mapping[int, Position] = field(default_factory=lambda: _EMPTY)

    @property
    def is_empty(self) -> bool:
        return not (self.rewired or self.moved or self.prior_neighbors)


@dataclass(frozen=True)
class ChangeSet:
    """Per-layer partition of affected nodes and the directed edges into them."""

    v_add: FrozenSet[int] = frozenset()
    v_del: FrozenSet[int] = frozenset()
    v_up: FrozenSet[int] = frozenset()
    e_add: FrozenSet[Edge] = frozenset()
    e_del: FrozenSet[Edge] = frozenset()
    e_up: FrozenSet[Edge] = frozenset()
    delta: GraphDelta = field(default_factory=GraphDelta)

    def __post_init__(self):
        if self.v_add & self.v_del:
            both = sorted(self.v_add & self.v_del)[:5]
            raise ValueError(f"nodes both added and deleted: {both}")
        if self.v_up & (self.v_add | self.v_del):
            raise ValueError("updated nodes overlap added/deleted nodes")

    @property
    def changed(self) -> FrozenSet[int]:
        """V = V_add ∪ V_del ∪ V_up."""
        return self.v_add | self.v_del | self.v_up

    @property
    def touched(self) -> int:
        return len(self.v_add) + len(self.v_del) + len(self.v_up)

    @property
    def is_empty(self) -> bool:
        return not (self.v_add or self.v_del or self.v_up) and self.delta.is_empty

    @property
    def edges(self) -> FrozenSet[Edge]:
        return self.e_add | self.e_del | self.e_up
