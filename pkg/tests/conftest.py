"""Shared fixtures: a small sensor, seeded streams and random networks."""

from typing import List

import numpy as np
import pytest

from evslide.config import GraphConfig, SensorGeometry, WindowSpec
from evslide.events import generate_uniform
from evslide.models import Event
from evslide.net.base import Activation, Readout
from evslide.net.layers import Dense
from evslide.net.spec import NetworkSpec, random_weights


@pytest.fixture
def geometry() -> SensorGeometry:
    return SensorGeometry(width=16, height=16)


@pytest.fixture
def graph_config() -> GraphConfig:
    # ~5 radius neighbors per node at 1e5 ev/s on the 16x16 sensor
    return GraphConfig(
        radius=3.0,
        temporal_scale=0.011,
        max_degree=4,
        window=WindowSpec(by_count=200),
    )


@pytest.fixture
def stream(geometry) -> List[Event]:
    return generate_uniform(geometry, 1e5, 6_000, seed=3)


@pytest.fixture
def spec() -> NetworkSpec:
    return random_weights([1, 8, 8], seed=1, num_classes=5, state_hidden=4)


@pytest.fixture
def deep_spec() -> NetworkSpec:
    return random_weights([1, 6, 8, 6], seed=2, num_classes=4)


@pytest.fixture
def pooled_spec() -> NetworkSpec:
    return random_weights(
        [1, 6, 6, 6],
        seed=5,
        num_classes=3,
        preset="pooled",
        pool_after=0,
        voxel=(4.0, 4.0, 500.0),
    )


def _stub(state_gain: float) -> NetworkSpec:
    return NetworkSpec(
        backbone=(),
        readout=Readout.MAX,
        head=(Dense(w=np.array([[1.0], [-1.0]]), b=np.zeros(2)),),
        state_head=(
            Dense(
                w=np.array([[state_gain]]), b=np.zeros(1), act=Activation.IDENTITY
            ),
        ),
        input_dim=1,
    )


@pytest.fixture
def make_stub():
    """No backbone, max readout over polarities; the state logit is gain * max p."""
    return _stub


@pytest.fixture
def stub_stream() -> List[Event]:
    """All polarities negative until index 99, the first positive event."""
    events = []
    for k in range(300):
        p = 1 if k >= 99 and k % 2 == 1 else -1
        events.append(Event(k % 16, (k // 16) % 16, 10 * k, p))
    return events
