"""FLOP accounting, step reports and run comparison."""

import csv
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional

from pydantic import BaseModel, Field

from .errors import DigestMismatchError, FlopDescriptorError

FLOP_CONVENTION = (
    "2-flop multiply-add: matvec(m,n)=2mn, message(in,out)=2*out*(in+3), bn(n)=4n, "
    "elu(n)=n, sigmoid(n)=4n, sum(k,n)=(k-1)n, compare(k,n)=(k-1)n, "
    "distance(k)=8k, scale(n)=n"
)

_CONVENTIONS: Dict[str, Callable[..., int]] = {
    "matvec": lambda m, n: 2 * m * n,
    "message": lambda in_dim, out_dim: 2 * out_dim * (in_dim + 3),
    "bn": lambda n: 4 * n,
    "elu": lambda n: n,
    "sigmoid": lambda n: 4 * n,
    "identity": lambda n: 0,
    "sum": lambda k, n: max(k - 1, 0) * n,
    "compare": lambda k, n: max(k - 1, 0) * n,
    # three differences, three squares, two adds per candidate
    "distance": lambda k: 8 * k,
    "scale": lambda n: n,
}


def count_flops(op: str, *args: int) -> int:
    """FLOPs of one operation descriptor, e.g. ``count_flops("matvec", 8, 4) == 64``."""
    try:
        rule = _CONVENTIONS[op]
    except KeyError:
        raise FlopDescriptorError(
            f"unknown operation '{op}'; known: {', '.join(sorted(_CONVENTIONS))}"
        ) from None
    try:
        return rule(*args)
    except TypeError as e:
        raise FlopDescriptorError(f"bad arguments {args} for '{op}': {e}") from None


class Component(str, Enum):
    """Where FLOPs are spent within a step."""
    GRAPH = "graph"
    CONV = "conv"
    POOL = "pool"
    READOUT = "readout"
    HEADS = "heads"
    REFRESH = "refresh"


class FlopMeter:
    """Per-component FLOP accumulator owned by one engine."""

    def __init__(self):
        self.counts: Dict[Component, int] = defaultdict(int)

    def add(self, component: Component, op: str, *args: int, times: int = 1) -> None:
        if times:
            self.counts[component] += times * count_flops(op, *args)

    def add_raw(self, component: Component, flops: int) -> None:
        self.counts[component] += flops

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def take(self) -> Dict[str, int]:
        """Return the breakdown and reset."""
        out = {c.value: self.counts.get(c, 0) for c in Component}
        self.counts = defaultdict(int)
        return out


class StepRecord(BaseModel):
    """One slide (or batch) step."""

    step: int
    events: int = 0  # events consumed by this step
    window: int = 0
    flops: int = 0
    breakdown: Dict[str, int] = Field(default_factory=dict)
    touched_nodes: int = 0
    wall_ns: int = 0


class FlopReport(BaseModel):
    """Per-step FLOPs and wall clock of one run over one stream."""

    label: str = "slide"
    stream_digest: str = ""
    config_digest: str = ""
    flop_convention: str = FLOP_CONVENTION
    window: int = 0
    mini_batch: int = 1
    steps: List[StepRecord] = Field(default_factory=list)
    cumulative: int = 0
    events: int = 0

    def add_step(self, record: StepRecord) -> None:
        self.steps.append(record)
        self.cumulative += record.flops
        self.events += record.events

    @property
    def per_event_flops(self) -> float:
        return self.cumulative / self.events if self.events else 0.0

    @property
    def wall_ns(self) -> int:
        return sum(s.wall_ns for s in self.steps)

    @property
    def per_event_wall_ns(self) -> float:
        return self.wall_ns / self.events if self.events else 0.0

    def breakdown(self) -> Dict[str, int]:
        totals: Dict[str, int] = defaultdict(int)
        for s in self.steps:
            for k, v in s.breakdown.items():
                totals[k] += v
        return dict(totals)

    def merge(self, other: "FlopReport") -> "FlopReport":
        """Concatenate steps and sum totals; associative."""
        return self.model_copy(
            update={
                "steps": self.steps + other.steps,
                "cumulative": self.cumulative + other.cumulative,
                "events": self.events + other.events,
            }
        )

    def to_csv(self, path: Path) -> None:
        """Per-step time series with cumulative and per-component FLOPs."""
        components = [c.value for c in Component]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                [
                    "step",
                    "events",
                    "window",
                    "flops",
                    "cumulative",
                    *components,
                    "touched_nodes",
                    "wall_ns",
                ]
            )
            running = 0
            for s in self.steps:
                running += s.flops
                writer.writerow(
                    [
                        s.step,
                        s.events,
                        s.window,
                        s.flops,
                        running,
                        *(s.breakdown.get(c, 0) for c in components),
                        s.touched_nodes,
                        s.wall_ns,
                    ]
                )


class ScalingPoint(BaseModel):
    window: int
    slide_flops_per_event: float
    batch_flops_per_event: float
    flop_ratio: Optional[float]
    wall_ratio: Optional[float] = None


class RunComparison(BaseModel):
    """Batch-over-slide cost ratios for one stream."""

    stream_digest: str
    flop_convention: str = FLOP_CONVENTION
    slide_flops_per_event: float
    batch_flops_per_event: float
    flop_ratio: Optional[float]
    slide_wall_ns_per_event: float
    batch_wall_ns_per_event: float
    wall_ratio: Optional[float]
    scaling: List[ScalingPoint] = Field(default_factory=list)


def ratio(numerator: float, denominator: float) -> Optional[float]:
    if denominator:
        return numerator / denominator
    return 1.0 if not numerator else None


def compare_runs(
    slide: FlopReport, batch: FlopReport, scaling: Optional[List[ScalingPoint]] = None
) -> RunComparison:
    """Per-event FLOP and wall-clock ratios of a batch run over a slide run."""
    if slide.stream_digest != batch.stream_digest:
        raise DigestMismatchError(
            "reports cover different streams "
            f"({slide.stream_digest[:12]} vs {batch.stream_digest[:12]})"
        )
    return RunComparison(
        stream_digest=slide.stream_digest,
        slide_flops_per_event=slide.per_event_flops,
        batch_flops_per_event=batch.per_event_flops,
        flop_ratio=ratio(batch.per_event_flops, slide.per_event_flops),
        slide_wall_ns_per_event=slide.per_event_wall_ns,
        batch_wall_ns_per_event=batch.per_event_wall_ns,
        wall_ratio=ratio(batch.per_event_wall_ns, slide.per_event_wall_ns),
        scaling=scaling or [],
    )


def scaling_point(window: int, slide: FlopReport, batch: FlopReport) -> ScalingPoint:
    return ScalingPoint(
        window=window,
        slide_flops_per_event=slide.per_event_flops,
        batch_flops_per_event=batch.per_event_flops,
        flop_ratio=ratio(batch.per_event_flops, slide.per_event_flops),
        wall_ratio=ratio(batch.per_event_wall_ns, slide.per_event_wall_ns),
    )
