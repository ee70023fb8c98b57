"""Event streams: file codecs and synthetic generators."""

import hashlib
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import SensorGeometry
from .errors import (
    EventEncodingError,
    EventFormatError,
    EventValidationError,
    OutOfOrderError,
)
from .models import Event, EventFormat

logger = logging.getLogger(__name__)

EVT1_MAGIC = b"EVT1"
EVT1_HEADER = struct.Struct("<4sHHI")  # magic, width, height, count
EVT1_RECORD = struct.Struct("<HHqb3x")  # x, y, t, p + padding to 16 bytes

U16_MAX = 0xFFFF
I64_MIN, I64_MAX = -(2**63), 2**63 - 1

Source = Union[bytes, bytearray, memoryview, BinaryIO]

# L(xs, ys, t) over the full pixel grid; t in microseconds
IntensityFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def validate_event(event: Event, geometry: Optional[SensorGeometry] = None) -> None:
    """Raise EventValidationError when polarity or coordinates are invalid."""
    if event.p not in (-1, 1):
        raise EventValidationError(
            f"polarity must be -1 or +1, got {event.p} in {event}"
        )
    if event.x < 0 or event.y < 0:
        raise EventValidationError(f"negative pixel coordinate in {event}")
    if geometry is not None and not geometry.contains(event.x, event.y):
        raise EventValidationError(
            f"{event} lies outside the {geometry.width}x{geometry.height} sensor"
        )


def _as_bytes(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return source.read()


def _order(events: List[Event], strict: bool) -> List[Event]:
    for k in range(1, len(events)):
        if events[k].t < events[k - 1].t:
            if strict:
                raise OutOfOrderError(
                    f"event {k} has t={events[k].t} after t={events[k - 1].t}"
                )
            logger.debug("Input out of order at record %d, sorting by timestamp", k)
            # sorted() is stable, so equal timestamps keep file order
            return sorted(events, key=lambda e: e.t)
    return events


def _read_csv(data: bytes, geometry: Optional[SensorGeometry]) -> List[Event]:
    events = []
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), start=1):
        line = raw.strip()
        if line:
            fields = line.split(b",")
            if len(fields) != 4:
                raise EventFormatError(
                    f"line {lineno}: expected 4 comma-separated fields, "
                    f"got {len(fields)}",
                    offset,
                )
            try:
                x, y, t, p = (int(f) for f in fields)
            except ValueError:
                raise EventFormatError(
                    f"line {lineno}: non-integer field in {line!r}", offset
                ) from None
            event = Event(x, y, t, p)
            try:
                validate_event(event, geometry)
            except EventValidationError as e:
                raise EventValidationError(f"line {lineno}: {e}", offset) from None
            events.append(event)
        offset += len(raw)
    return events


def read_evt1_header(data: bytes) -> Tuple[int, int, int]:
    """Return (width, height, count) from an EVT1 header."""
    if len(data) < EVT1_HEADER.size:
        raise EventFormatError("truncated EVT1 header", 0)
    magic, width, height, count = EVT1_HEADER.unpack_from(data, 0)
    if magic != EVT1_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}, expected {EVT1_MAGIC!r}", 0)
    return width, height, count


def _read_evt1(data: bytes, geometry: Optional[SensorGeometry]) -> List[Event]:
    width, height, count = read_evt1_header(data)
    if geometry is None and width and height:
        geometry = SensorGeometry(width=width, height=height)

    expected = EVT1_HEADER.size + count * EVT1_RECORD.size
    if len(data) < expected:
        complete = (len(data) - EVT1_HEADER.size) // EVT1_RECORD.size
        raise EventFormatError(
            f"header declares {count} records but only {complete} are complete",
            EVT1_HEADER.size + complete * EVT1_RECORD.size,
        )
    if len(data) > expected:
        raise EventFormatError(
            f"{len(data) - expected} trailing bytes after records", expected
        )

    events = []
    body = memoryview(data)[EVT1_HEADER.size:expected]
    for k, (x, y, t, p) in enumerate(EVT1_RECORD.iter_unpack(body)):
        event = Event(x, y, t, p)
        try:
            validate_event(event, geometry)
        except EventValidationError as e:
            offset = EVT1_HEADER.size + k * EVT1_RECORD.size
            raise EventValidationError(str(e), offset) from None
        events.append(event)
    return events


def read_events(
    source: Source,
    fmt: EventFormat,
    strict: bool = False,
    geometry: Optional[SensorGeometry] = None,
) -> List[Event]:
    """Parse an event stream.

    Events come back in file order when timestamps are monotone. Otherwise
    they are stable-sorted by t, or OutOfOrderError is raised in strict mode.
    """
    data = _as_bytes(source)
    fmt = EventFormat(fmt)
    if fmt is EventFormat.CSV:
        events = _read_csv(data, geometry)
    else:
        events = _read_evt1(data, geometry)
    return _order(events, strict)


def write_events(
    events: Sequence[Event],
    fmt: EventFormat,
    geometry: Optional[SensorGeometry] = None,
) -> bytes:
    """Serialize events.

    EVT1 headers carry the geometry, or the bounding box when none is given.
    """
    fmt = EventFormat(fmt)
    for event in events:
        validate_event(event, geometry)

    if fmt is EventFormat.CSV:
        return "".join(f"{e.x},{e.y},{e.t},{e.p}\n" for e in events).encode("ascii")

    if geometry is not None:
        width, height = geometry.width, geometry.height
    else:
        width = max((e.x for e in events), default=-1) + 1
        height = max((e.y for e in events), default=-1) + 1
    if width > U16_MAX or height > U16_MAX:
        raise EventEncodingError(
            f"sensor {width}x{height} does not fit u16 header fields"
        )

    out = io.BytesIO()
    out.write(EVT1_HEADER.pack(EVT1_MAGIC, width, height, len(events)))
    for e in events:
        if e.x > U16_MAX or e.y > U16_MAX:
            raise EventEncodingError(f"pixel ({e.x}, {e.y}) exceeds the u16 range")
        if not I64_MIN <= e.t <= I64_MAX:
            raise EventEncodingError(f"timestamp {e.t} exceeds the i64 range")
        out.write(EVT1_RECORD.pack(e.x, e.y, e.t, e.p))
    return out.getvalue()


def load_events(
    path: Path, strict: bool = False, geometry: Optional[SensorGeometry] = None
) -> List[Event]:
    path = Path(path)
    fmt = EventFormat.from_suffix(path.suffix)
    with open(path, "rb") as f:
        events = read_events(f, fmt, strict=strict, geometry=geometry)
    logger.info("Loaded %d events from %s", len(events), path)
    return events


def save_events(
    path: Path, events: Sequence[Event], geometry: Optional[SensorGeometry] = None
) -> None:
    path = Path(path)
    fmt = EventFormat.from_suffix(path.suffix)
    path.write_bytes(write_events(events, fmt, geometry))
    logger.info("Wrote %d events to %s", len(events), path)


def stream_digest(
    events: Sequence[Event], geometry: Optional[SensorGeometry] = None
) -> str:
    """SHA-256 of the EVT1 encoding."""
    return hashlib.sha256(write_events(events, EventFormat.EVT1, geometry)).hexdigest()


def perturb_duplicates(events: Iterable[Event]) -> List[Event]:
    """Move repeated (pixel, t) pairs forward 1 us until unique, then re-sort by t."""
    seen = set()
    out = []
    moved = 0
    for e in events:
        t = e.t
        while (e.x, e.y, t) in seen:
            t += 1
        seen.add((e.x, e.y, t))
        if t != e.t:
            moved += 1
            e = Event(e.x, e.y, t, e.p)
        out.append(e)
    if moved:
        logger.debug("Perturbed %d duplicate timestamps", moved)
        out.sort(key=lambda ev: ev.t)
    return out


def estimate_rate(events: Sequence[Event]) -> Optional[float]:
    """Events per second over the stream's time span; None when the span is zero."""
    if len(events) < 2:
        return None
    span_us = events[-1].t - events[0].t
    if span_us <= 0:
        return None
    return len(events) / (span_us * 1e-6)


@dataclass(frozen=True)
class SyntheticScene:
    """Latent log-intensity signal sampled by the trigger model."""

    intensity: IntensityFn
    threshold: float
    name: str = "custom"

    def __post_init__(self):
        if not self.threshold > 0:
            raise EventValidationError(
                f"contrast threshold must be positive, got {self.threshold}"
            )


def constant_scene(level: float = 0.0, threshold: float = 0.2) -> SyntheticScene:
    return SyntheticScene(
        intensity=lambda xs, ys, t: np.full(xs.shape, level, dtype=np.float64),
        threshold=threshold,
        name="constant",
    )


def ramp_scene(
    slope_per_us: float, threshold: float = 0.2, pixel: Optional[Tuple[int, int]] = None
) -> SyntheticScene:
    """Linear log-intensity ramp, over the whole sensor or a single pixel."""

    def intensity(xs, ys, t):
        level = np.full(xs.shape, slope_per_us * t, dtype=np.float64)
        if pixel is not None:
            level[(xs != pixel[0]) | (ys != pixel[1])] = 0.0
        return level

    return SyntheticScene(intensity=intensity, threshold=threshold, name="ramp")


def moving_edge_scene(
    speed: float, threshold: float = 0.2, contrast: float = 1.0, x0: float = 0.0
) -> SyntheticScene:
    """Bright half-plane whose edge translates along +x at ``speed`` px/s."""

    def intensity(xs, ys, t):
        edge = x0 + speed * t * 1e-6
        return np.where(xs < edge, contrast, 0.0)

    return SyntheticScene(intensity=intensity, threshold=threshold, name="moving_edge")


def moving_bar_scene(
    speed: float,
    width: float = 4.0,
    threshold: float = 0.2,
    contrast: float = 1.0,
    x0: float = 0.0,
) -> SyntheticScene:
    """Bright bar moving along +x; its two edges fire with opposite polarity."""

    def intensity(xs, ys, t):
        front = x0 + speed * t * 1e-6
        return np.where((xs < front) & (xs >= front - width), contrast, 0.0)

    return SyntheticScene(intensity=intensity, threshold=threshold, name="moving_bar")


def generate_synthetic(
    scene: SyntheticScene,
    geometry: SensorGeometry,
    duration_us: int,
    step_us: int = 100,
) -> List[Event]:
    """Sample the scene every ``step_us`` and emit one event per pixel per sample
    whose log-intensity moved at least the threshold since its last event."""
    if duration_us <= 0 or step_us <= 0:
        raise EventValidationError("duration and sampling step must be positive")

    ys, xs = np.mgrid[0:geometry.height, 0:geometry.width]
    reference = np.broadcast_to(scene.intensity(xs, ys, 0.0), xs.shape).astype(
        np.float64
    )

    events: List[Event] = []
    for t in range(step_us, duration_us + 1, step_us):
        level = np.broadcast_to(scene.intensity(xs, ys, float(t)), xs.shape)
        increment = level - reference
        fired = np.abs(increment) >= scene.threshold
        if not fired.any():
            continue
        # nonzero walks row-major, so ties at t come out ordered by (y, x)
        for y, x in zip(*np.nonzero(fired)):
            events.append(Event(int(x), int(y), t, 1 if increment[y, x] > 0 else -1))
        reference = np.where(fired, level, reference)

    logger.debug("Scene %s produced %d events", scene.name, len(events))
    return events


def generate_uniform(
    geometry: SensorGeometry, rate: float, duration_us: int, seed: int = 0
) -> List[Event]:
    """Exactly round(rate * duration) events at jittered-uniform timestamps."""
    if rate <= 0:
        raise EventValidationError(f"rate must be positive, got {rate}")
    count = round(rate * duration_us * 1e-6)
    if count <= 0:
        return []

    rng = np.random.default_rng(seed)
    slot = duration_us / count
    jitter = rng.random(count)
    ts = np.floor((np.arange(count) + jitter) * slot).astype(np.int64)
    xs = rng.integers(0, geometry.width, count)
    ys = rng.integers(0, geometry.height, count)
    ps = rng.choice(np.array([-1, 1]), count)

    events = [
        Event(int(x), int(y), int(t), int(p)) for x, y, t, p in zip(xs, ys, ts, ps)
    ]
    return perturb_duplicates(events)


def padded_stream(
    events: Sequence[Event], padding: Sequence[Event], offset_x: int
) -> List[Event]:
    """Merge a stream with padding shifted ``offset_x`` pixels away, sorted by t."""
    shifted = [Event(e.x + offset_x, e.y, e.t, e.p) for e in padding]
    merged = sorted(list(events) + shifted, key=lambda e: e.t)
    return perturb_duplicates(merged)

