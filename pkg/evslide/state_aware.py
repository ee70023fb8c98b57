"""Confidence head and the early-stop controller."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence

import numpy as np

from .config import GraphConfig, PolicyConfig, SensorGeometry
from .errors import ConfigError, ShapeError
from .graph import EventGraph
from .models import Event, Precision
from .net.base import Activation
from .net.forward import batch_forward
from .net.layers import Dense
from .net.spec import NetworkSpec
from .slide import SlideEngine

logger = logging.getLogger(__name__)


def stability_labels(
    predictions: Sequence[int], reference: Literal["previous", "final"] = "previous"
) -> List[int]:
    """1 where a prediction counts as stable, else 0.

    With ``reference="previous"`` a prediction is stable when it repeats
    the one before it (the first is never stable). ``"final"`` compares
    every prediction with the last one instead.
    """
    if reference == "final":
        if not predictions:
            return []
        last = predictions[-1]
        return [int(p == last) for p in predictions]
    if reference != "previous":
        raise ValueError(f"unknown stability reference '{reference}'")
    if not predictions:
        return []
    return [0] + [int(b == a) for a, b in zip(predictions, predictions[1:])]


def confidence(vector: np.ndarray, state_head: Sequence[Dense]) -> float:
    """Sigmoid of the state head's scalar output."""
    x = np.asarray(vector)
    for k, layer in enumerate(state_head):
        if x.shape != (layer.in_dim,):
            raise ShapeError(
                f"state head layer {k} expects {layer.in_dim} inputs, "
                f"got {x.shape[0] if x.ndim else 0}"
            )
        x = layer.forward(x)
    if x.shape != (1,):
        raise ShapeError(f"state head must produce 1 output, got {x.shape[0]}")
    return float(Activation.SIGMOID.apply(np.float64(x[0])))


@dataclass(frozen=True)
class TracePoint:
    index: int
    prediction: int
    confidence: float


@dataclass
class StabilityTrace:
    """Head evaluations along one stream, indices strictly increasing."""

    points: List[TracePoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def append(self, index: int, prediction: int, conf: float) -> None:
        if self.points and index <= self.points[-1].index:
            raise ValueError(
                f"trace index {index} does not follow {self.points[-1].index}"
            )
        self.points.append(TracePoint(index, prediction, conf))

    @property
    def predictions(self) -> List[int]:
        return [p.prediction for p in self.points]

    def labels(self, reference: Literal["previous", "final"] = "previous") -> List[int]:
        return stability_labels(self.predictions, reference)

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "class", "confidence"])
            for p in self.points:
                writer.writerow([p.index, p.prediction, repr(p.confidence)])


@dataclass(frozen=True)
class EarlyStopPolicy:
    """When to evaluate the heads and when to stop.

    Heads run every ``stride`` events. The first evaluated count that is at
    least max(min_events, 1) and whose confidence reaches ``threshold`` stops.
    """

    threshold: float = 0.5
    stride: int = 1
    min_events: int = 0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.min_events < 0:
            raise ConfigError(f"min_events must be >= 0, got {self.min_events}")

    @classmethod
    def from_config(cls, config: PolicyConfig) -> "EarlyStopPolicy":
        return cls(
            threshold=config.threshold,
            stride=config.stride,
            min_events=config.min_events,
        )

    def evaluates(self, count: int) -> bool:
        return count % self.stride == 0

    def stops(self, count: int, conf: float) -> bool:
        return count >= max(self.min_events, 1) and conf >= self.threshold


@dataclass
class EarlyResult:
    prediction: int
    stop_index: int
    trace: StabilityTrace
    stopped: bool
    confidence: float = 0.0
    final_prediction: Optional[int] = None  # prediction on the whole stream, when known


def run_early_recognition(
    engine: SlideEngine, stream: Sequence[Event], policy: EarlyStopPolicy
) -> EarlyResult:
    """Feed ``stream`` event by event until the policy fires.

    The stop index is the 1-based count of consumed events. When the
    policy never fires, the whole stream is consumed and the final
    prediction is returned.
    """
    trace = StabilityTrace()
    for k, event in enumerate(stream):
        count = k + 1
        evaluate = policy.evaluates(count)
        result = engine.step([event], evaluate=evaluate)
        if not evaluate:
            continue
        trace.append(count, result.prediction, result.confidence)
        if policy.stops(count, result.confidence):
            logger.info(
                "Early stop at event %d (confidence %.3f)", count, result.confidence
            )
            return EarlyResult(result.prediction, count, trace, True, result.confidence)

    if not trace.points or trace.points[-1].index != len(stream):
        engine.evaluate()
    prediction = int(np.argmax(engine.logits))
    conf = float(Activation.SIGMOID.apply(np.float64(engine.state_logit)))
    return EarlyResult(prediction, len(stream), trace, False, conf)


@dataclass
class BatchwiseResult:
    prediction: int
    consumed: int
    batch_us: int
    confidence: float


def run_batchwise_recognition(
    spec: NetworkSpec,
    stream: Sequence[Event],
    graph_config: GraphConfig,
    geometry: SensorGeometry,
    batch_us: int,
    precision: Precision = Precision.F64,
) -> BatchwiseResult:
    """Classify the first ``batch_us`` of the stream in one batch pass."""
    if batch_us <= 0:
        raise ConfigError(f"batch duration must be positive, got {batch_us}")
    prefix: List[Event] = []
    if stream:
        end = stream[0].t + batch_us
        prefix = [e for e in stream if e.t < end]
    graph = EventGraph(graph_config, geometry)
    graph.slide(prefix)
    result = batch_forward(graph, spec, Precision(precision).dtype)
    return BatchwiseResult(
        prediction=result.prediction,
        consumed=len(prefix),
        batch_us=batch_us,
        confidence=result.confidence,
    )


def early_summary(
    results: Sequence[EarlyResult], lengths: Optional[Sequence[int]] = None
) -> dict:
    """Stop-index distribution and how often the stop prediction is the final one."""
    stops = np.array([r.stop_index for r in results], dtype=np.float64)
    summary = {
        "streams": len(results),
        "stopped": sum(r.stopped for r in results),
        "stop_index_mean": float(stops.mean()) if len(stops) else 0.0,
        "stop_index_median": float(np.median(stops)) if len(stops) else 0.0,
        "stop_index_min": int(stops.min()) if len(stops) else 0,
        "stop_index_max": int(stops.max()) if len(stops) else 0,
    }
    finals = [r for r in results if r.final_prediction is not None]
    if finals:
        agree = sum(r.prediction == r.final_prediction for r in finals)
        summary["final_agreement"] = agree / len(finals)
    if lengths is not None:
        summary["consumed_fraction"] = float(
            np.mean([r.stop_index / n if n else 1.0 for r, n in zip(results, lengths)])
        ) if results else 0.0
    return summary
