"""Benchmark protocols: slide and batch cost reports, window scaling, index timing."""

import logging
import math
import time
from collections import deque
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .config import GraphConfig, SensorGeometry, WindowSpec
from .events import generate_uniform, padded_stream
from .graph import EventGraph
from .metrics import FlopMeter, FlopReport, StepRecord
from .models import Event, Precision
from .net.forward import batch_forward
from .net.spec import NetworkSpec
from .pixel_index import PixelQueueIndex
from .slide import SlideEngine, StepResult

logger = logging.getLogger(__name__)

StepCallback = Callable[[StepResult], None]


def chunks(events: Sequence[Event], size: int):
    for lo in range(0, len(events), size):
        yield events[lo : lo + size]


def slide_report(
    engine: SlideEngine,
    events: Sequence[Event],
    mini_batch: int = 1,
    warmup: int = 0,
    label: str = "slide",
    on_step: Optional[StepCallback] = None,
) -> FlopReport:
    """Step ``engine`` through ``events``; the first ``warmup`` steps go unrecorded."""
    report = FlopReport(label=label, mini_batch=mini_batch)
    for k, result in enumerate(engine.run(events, mini_batch)):
        if on_step is not None:
            on_step(result)
        if k >= warmup:
            report.add_step(result.record)
    report.window = len(engine.graph)
    return report


def batch_report(
    spec: NetworkSpec,
    graph_config: GraphConfig,
    geometry: SensorGeometry,
    initial: Sequence[Event],
    events: Sequence[Event],
    mini_batch: int = 1,
    precision: Precision = Precision.F64,
    label: str = "batch",
    max_steps: Optional[int] = None,
    on_step: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> FlopReport:
    """Recompute the whole network after every slide.

    Graph maintenance is shared with the slide path and is not charged here.
    """
    dtype = Precision(precision).dtype
    spec = spec.astype(dtype)
    graph = EventGraph(graph_config, geometry)
    graph.slide(initial)
    report = FlopReport(label=label, mini_batch=mini_batch)
    for k, chunk in enumerate(chunks(events, mini_batch)):
        if max_steps is not None and k >= max_steps:
            break
        graph.slide(chunk)
        start = time.perf_counter_ns()
        result = batch_forward(graph, spec, dtype, meter=FlopMeter())
        wall = time.perf_counter_ns() - start
        report.add_step(
            StepRecord(
                step=k + 1,
                events=len(chunk),
                window=len(graph),
                flops=sum(result.flops.values()),
                breakdown=result.flops,
                touched_nodes=sum(len(layer.features) for layer in result.layers),
                wall_ns=wall,
            )
        )
        if on_step is not None:
            on_step(k + 1, result.logits, result.state_logit)
    report.window = len(graph)
    return report


class SweepPoint(BaseModel):
    mini_batch: int
    steps: int
    cumulative_flops: int
    per_event_flops: float
    wall_ns: int
    final_logits: List[float]
    max_logit_deviation: float = 0.0


def minibatch_sweep(
    make_engine: Callable[[], SlideEngine],
    initial: Sequence[Event],
    events: Sequence[Event],
    sizes: Sequence[int],
) -> List[SweepPoint]:
    """Same stream, same network, different mini-batch sizes."""
    points: List[SweepPoint] = []
    reference: Optional[np.ndarray] = None
    for size in sizes:
        engine = make_engine()
        engine.warm_start(initial)
        report = slide_report(engine, events, mini_batch=size)
        logits = engine.evaluate()[0].astype(np.float64)
        engine.meter.take()
        if reference is None:
            reference = logits
        scale = max(float(np.max(np.abs(reference))), np.finfo(np.float64).tiny)
        points.append(
            SweepPoint(
                mini_batch=size,
                steps=len(report.steps),
                cumulative_flops=report.cumulative,
                per_event_flops=report.per_event_flops,
                wall_ns=report.wall_ns,
                final_logits=[float(v) for v in logits],
                max_logit_deviation=float(np.max(np.abs(logits - reference))) / scale,
            )
        )
        logger.info("mini-batch %d: %d cumulative FLOPs", size, report.cumulative)
    return points


def receptive_gap(spec: NetworkSpec, graph_config: GraphConfig) -> int:
    """Pixel gap that keeps two regions outside each other's receptive field."""
    reach = graph_config.radius * (len(spec.backbone) + 1)
    for layer in spec.backbone:
        if getattr(layer, "radius", None):
            reach += layer.radius
    return math.ceil(reach) + 1


def padded_window_stream(
    geometry: SensorGeometry,
    base_window: int,
    window: int,
    rate_hz: float,
    n_events: int,
    gap: int,
    seed: int = 0,
) -> Tuple[SensorGeometry, List[Event]]:
    """A stream whose count window of ``window`` events holds ``base_window``
    events of the base region plus padding at the same density, ``gap``
    pixels away."""
    share = base_window / window
    duration_us = math.ceil(n_events * share / rate_hz * 1e6)
    base = generate_uniform(geometry, rate_hz, duration_us, seed)
    if window <= base_window:
        return geometry, base
    extra = window - base_window
    pad_geometry = SensorGeometry(
        width=math.ceil(geometry.width * extra / base_window), height=geometry.height
    )
    pad_rate = rate_hz * extra / base_window
    padding = generate_uniform(pad_geometry, pad_rate, duration_us, seed + 1)
    offset = geometry.width + gap
    full = SensorGeometry(width=offset + pad_geometry.width, height=geometry.height)
    return full, padded_stream(base, padding, offset)


class IndexTiming(BaseModel):
    """Cumulative wall time of the sliding-index protocol."""

    window: int
    slide: int
    repeats: int
    insert_ns: int = 0
    evict_ns: int = 0
    search_ns: int = 0
    results: int = 0

    @property
    def per_insert_ns(self) -> float:
        n = self.slide * self.repeats
        return self.insert_ns / n if n else 0.0


class GrowthPoint(BaseModel):
    live_size: int
    per_update_ns: float


class IndexBenchResult(BaseModel):
    timing: IndexTiming
    growth: List[GrowthPoint] = Field(default_factory=list)
    growth_factor: Optional[float] = None


def _fill(
    index: PixelQueueIndex,
    events: Sequence[Event],
    fifo: Deque[Tuple[Tuple[int, int], int]],
    first: int = 0,
):
    for k, e in enumerate(events):
        index.insert(e, first + k)
        fifo.append((e.pixel, first + k))


def index_timing(
    geometry: SensorGeometry,
    radius: float,
    alpha: float,
    window: int,
    slide: int,
    repeats: int,
    seed: int = 0,
) -> IndexTiming:
    """Fill ``window`` events, then repeatedly insert ``slide``, evict ``slide``
    and radius-search every new event."""
    n = window + slide * repeats
    events = generate_uniform(geometry, 1e6, n, seed)
    index = PixelQueueIndex(geometry)
    fifo: Deque[Tuple[Tuple[int, int], int]] = deque()
    _fill(index, events[:window], fifo)

    timing = IndexTiming(window=window, slide=slide, repeats=repeats)
    pos = window
    for _ in range(repeats):
        batch = events[pos : pos + slide]
        start = time.perf_counter_ns()
        _fill(index, batch, fifo, pos)
        timing.insert_ns += time.perf_counter_ns() - start

        start = time.perf_counter_ns()
        for _ in range(len(batch)):
            pixel, _nid = fifo.popleft()
            index.remove_oldest(pixel)
        timing.evict_ns += time.perf_counter_ns() - start

        start = time.perf_counter_ns()
        for e in batch:
            timing.results += len(index.radius_search((e.x, e.y, e.t), radius, alpha))
        timing.search_ns += time.perf_counter_ns() - start
        pos += slide
    return timing


def insert_growth(
    geometry: SensorGeometry,
    live_size: int,
    updates: int,
    factor: int = 8,
    seed: int = 0,
) -> List[GrowthPoint]:
    """Amortized insert+evict cost at ``live_size`` and ``factor`` times it.

    The sensor grows with the live size so spatial density stays fixed.
    """
    points = []
    for scale in (1, factor):
        grown = SensorGeometry(width=geometry.width * scale, height=geometry.height)
        size = live_size * scale
        events = generate_uniform(grown, 1e6, size + updates, seed)
        index = PixelQueueIndex(grown)
        fifo: Deque[Tuple[Tuple[int, int], int]] = deque()
        _fill(index, events[:size], fifo)
        start = time.perf_counter_ns()
        for k in range(size, len(events)):
            e = events[k]
            index.insert(e, k)
            fifo.append((e.pixel, k))
            index.remove_oldest(fifo.popleft()[0])
        elapsed = time.perf_counter_ns() - start
        per_update = elapsed / max(len(events) - size, 1)
        points.append(GrowthPoint(live_size=size, per_update_ns=per_update))
    return points


def index_benchmark(
    geometry: SensorGeometry,
    radius: float,
    alpha: float,
    window: int,
    slide: int,
    repeats: int,
    seed: int = 0,
) -> IndexBenchResult:
    timing = index_timing(geometry, radius, alpha, window, slide, repeats, seed)
    growth = insert_growth(geometry, max(window // 8, 1), slide * repeats, seed=seed)
    factor = None
    if growth[0].per_update_ns:
        factor = growth[1].per_update_ns / growth[0].per_update_ns
    return IndexBenchResult(timing=timing, growth=growth, growth_factor=factor)


def fixed_scale_config(
    graph_config: GraphConfig, geometry: SensorGeometry, window: int, rate_hz: float
) -> GraphConfig:
    """Count window with the temporal scale pinned to the base region's span."""
    span_us = window / rate_hz * 1e6
    return graph_config.model_copy(
        update={
            "window": WindowSpec(by_count=window),
            "temporal_scale": graph_config.temporal_scale
            or geometry.diagonal / span_us,
        }
    )
