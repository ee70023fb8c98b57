"""Base layer interface."""

from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Dict

import numpy as np


class LayerKind(str, Enum):
    """Layer kinds understood by the weights document."""
    GRAPH_CONV = "graph_conv"
    VOXEL_POOL = "voxel_pool"
    DENSE = "dense"


class Activation(str, Enum):
    """Pointwise nonlinearities."""
    ELU = "elu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.ELU:
            # alpha = 1
            return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
        if self is Activation.SIGMOID:
            return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
        return x


class Readout(str, Enum):
    """Global pooling over the last layer's nodes."""
    MEAN = "mean"
    MAX = "max"
    MEAN_MAX = "mean_max"

    def width(self, channels: int) -> int:
        return 2 * channels if self is Readout.MEAN_MAX else channels


class Layer(ABC):
    """Abstract base class for network layers."""

    kind: LayerKind

    @property
    @abstractmethod
    def in_dim(self) -> int:
        """Width of the features the layer consumes."""
        pass

    @property
    @abstractmethod
    def out_dim(self) -> int:
        """Width of the features the layer produces."""
        pass

    @abstractmethod
    def astype(self, dtype) -> "Layer":
        """Copy with all parameters cast to ``dtype``."""
        pass

    @abstractmethod
    def to_document(self) -> Dict[str, Any]:
        """Entry of the weights JSON document."""
        pass

    def describe(self) -> str:
        return f"{self.kind.value}({self.in_dim}->{self.out_dim})"
