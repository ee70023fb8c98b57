"""Tests for the incremental slide engine."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evslide.config import GraphConfig, SensorGeometry, WindowSpec
from evslide.errors import ConfigError, DuplicateTimestampError, OutOfOrderError
from evslide.events import generate_uniform
from evslide.graph import EventGraph
from evslide.models import ChangeSet, EdgeMode, Event, Precision
from evslide.net import FeatureMap, message
from evslide.net.layers import VoxelPool
from evslide.net.spec import load_weights, random_weights
from evslide.slide import SlideEngine, propagate_changeset, relative_error


def engine_for(spec, graph_config, geometry, **kwargs):
    kwargs.setdefault("refresh_interval", 0)
    return SlideEngine(spec, graph_config, geometry, **kwargs)


def run_all(engine, events, mini_batch=1):
    results = list(engine.run(events, mini_batch))
    return results[-1] if results else None


def engine_state(engine):
    return (
        engine.graph.node_ids(),
        engine.graph.neighbor_lists(),
        engine.graph.next_id,
        engine.step_count,
        [
            (layer.features.ids(), layer.features.matrix().copy())
            for layer in engine.state.layers
        ],
        engine.logits.copy(),
    )


def assert_same_state(a, b):
    assert a[:4] == b[:4]
    for (ids_a, f_a), (ids_b, f_b) in zip(a[4], b[4]):
        assert ids_a == ids_b
        np.testing.assert_array_equal(f_a, f_b)
    np.testing.assert_array_equal(a[5], b[5])


def stacked_pool_document(seed=7):
    """conv, pool, conv, pool, conv with the second pool coarser than the first."""
    doc = random_weights([1, 6, 6, 6], seed=seed, num_classes=3).to_document()
    doc["layers"].insert(1, {"kind": "voxel_pool", "voxel": [2.0, 2.0, 300.0]})
    doc["layers"].insert(3, {"kind": "voxel_pool", "voxel": [5.0, 5.0, 900.0]})
    return doc


class TestPropagateChangeset:
    def test_empty_in_empty_out(self, graph_config, geometry, stream):
        graph = EventGraph(graph_config, geometry)
        graph.slide(stream[:50])
        out = propagate_changeset(graph, FeatureMap(1), FeatureMap(8), ChangeSet())
        assert out.is_empty
        assert not out.edges

    def test_isolated_add(self, graph_config):
        graph = EventGraph(graph_config, SensorGeometry(width=64, height=16))
        graph.slide([Event(1, 1, 10 * k, 1) for k in range(5)])
        changes = graph.slide([Event(60, 10, 60, 1)])
        source = FeatureMap(1)
        for i in graph.node_ids():
            source.put(i, np.ones(1))
        out = propagate_changeset(graph, source, FeatureMap(8), changes)
        assert out.v_add == {5}
        assert not out.v_up
        assert not out.e_add
        assert not out.e_up


class TestMessageDelta:
    def test_new_neighbor_adds_its_message(self, spec, graph_config, geometry):
        engine = engine_for(spec, graph_config, geometry)
        engine.warm_start([Event(5, 5, 0, 1)])
        conv = engine.spec.backbone[0]
        before = engine.state.layers[1].features.preactivation(0).copy()

        engine.step([Event(6, 5, 10, -1)])
        assert engine.graph.in_neighbors(0) == (1,)
        after = engine.state.layers[1].features.preactivation(0)
        expected = message(np.array([-1.0]), engine.graph.edge_attr(1, 0), conv)
        np.testing.assert_allclose(after - before, expected, rtol=1e-12, atol=1e-12)


class TestEquivalence:
    @pytest.mark.parametrize("mini_batch", [1, 7])
    def test_f64_matches_batch(self, spec, graph_config, geometry, stream, mini_batch):
        engine = engine_for(spec, graph_config, geometry)
        for k, _ in enumerate(engine.run(stream, mini_batch)):
            if k % 40 == 0:
                assert engine.compare().within(1e-10)
        check = engine.compare()
        assert check.within(1e-10)
        assert max(check.layer_errors) <= 1e-10

    def test_deep_network(self, deep_spec, graph_config, geometry, stream):
        engine = engine_for(deep_spec, graph_config, geometry)
        run_all(engine, stream[:400], 3)
        check = engine.compare()
        assert check.within(1e-10)
        assert len(check.layer_errors) == deep_spec.depth + 1

    def test_f32_matches_batch(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry, precision=Precision.F32)
        run_all(engine, stream[:300])
        assert engine.logits.dtype == np.float32
        assert engine.compare().within(1e-5)

    def test_refresh_every_step_is_exact(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry, refresh_interval=1)
        run_all(engine, stream[:250], 5)
        assert engine.compare().exact

    def test_mini_batch_sizes_agree(self, spec, graph_config, geometry, stream):
        finals = []
        for size in (1, 10, 100):
            engine = engine_for(spec, graph_config, geometry)
            run_all(engine, stream, size)
            finals.append(engine.logits.copy())
        for other in finals[1:]:
            assert relative_error(other, finals[0]) <= 1e-10

    def test_one_event_equals_batch(self, spec, graph_config, geometry):
        engine = engine_for(spec, graph_config, geometry)
        result = engine.step([Event(3, 3, 0, 1)])
        reference = engine.batch()
        assert relative_error(result.logits, reference.logits) <= 1e-10
        assert not result.degenerate

    def test_pooled_network(self, pooled_spec, graph_config, geometry, stream):
        engine = engine_for(pooled_spec, graph_config, geometry)
        for k, _ in enumerate(engine.run(stream[:400], 4)):
            if k % 20 == 0:
                assert engine.compare().within(1e-10)
        assert engine.compare().within(1e-10)

    def test_stacked_pools_from_weights_document(
        self, tmp_path, graph_config, geometry, stream
    ):
        path = tmp_path / "weights.json"
        path.write_text(json.dumps(stacked_pool_document()))
        spec = load_weights(path)
        assert [type(layer) for layer in spec.backbone][1::2] == [VoxelPool, VoxelPool]

        engine = engine_for(spec, graph_config, geometry)
        for k, _ in enumerate(engine.run(stream, 3)):
            check = engine.compare()
            assert check.node_sets_match, f"node sets diverge at step {k + 1}"
            assert check.within(1e-10), f"logits diverge at step {k + 1}"
        assert max(engine.compare().layer_errors) <= 1e-10

    def test_stacked_pools_refresh_every_step_is_exact(
        self, graph_config, geometry, stream
    ):
        spec = load_weights(json.dumps(stacked_pool_document(seed=8)))
        engine = engine_for(spec, graph_config, geometry, refresh_interval=1)
        run_all(engine, stream[:400], 3)
        assert engine.compare().exact

    def test_causal_edges(self, spec, graph_config, geometry, stream):
        config = graph_config.model_copy(update={"edge_mode": EdgeMode.CAUSAL})
        engine = engine_for(spec, config, geometry)
        run_all(engine, stream[:400], 2)
        assert engine.compare().within(1e-10)

    def test_time_window(self, spec, geometry, stream):
        config = GraphConfig(
            radius=3.0,
            temporal_scale=0.011,
            max_degree=4,
            window=WindowSpec(by_time_us=1_500),
        )
        engine = engine_for(spec, config, geometry)
        run_all(engine, stream, 3)
        assert engine.compare().within(1e-10)


class TestStep:
    def test_empty_incoming_keeps_outputs(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry)
        engine.warm_start(stream[:100])
        before = engine.logits.copy()
        result = engine.step([])
        np.testing.assert_array_equal(result.logits, before)
        assert result.record.touched_nodes == 0

    def test_empty_window_is_degenerate(self, spec, graph_config, geometry):
        engine = engine_for(spec, graph_config, geometry)
        result = engine.step([])
        assert result.degenerate

    def test_far_event_touches_one_node_per_layer(self, spec, stream):
        geometry = SensorGeometry(width=64, height=16)
        config = GraphConfig(
            radius=3.0,
            temporal_scale=0.011,
            max_degree=4,
            window=WindowSpec(by_count=10_000),
        )
        engine = engine_for(spec, config, geometry)
        engine.warm_start(stream[:300])
        result = engine.step([Event(60, 10, stream[299].t + 10, 1)])
        assert result.record.touched_nodes == 1 + spec.depth

    def test_to_record(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry)
        record = engine.step(stream[:3]).to_record()
        assert set(record) == {
            "step",
            "window",
            "flops",
            "touched_nodes",
            "logits",
            "state_logit",
            "breakdown",
            "wall_ns",
        }
        assert record["step"] == 1
        assert record["window"] == 3
        assert len(record["logits"]) == spec.num_classes
        assert record["flops"] == sum(record["breakdown"].values())

    def test_periodic_refresh(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry, refresh_interval=3)
        results = list(engine.run(stream[:9]))
        assert [r.refreshed for r in results] == [False, False, True] * 3
        assert results[2].record.breakdown["refresh"] > 0
        assert results[1].record.breakdown["refresh"] == 0

    def test_negative_refresh_interval(self, spec, graph_config, geometry):
        with pytest.raises(ConfigError):
            SlideEngine(spec, graph_config, geometry, refresh_interval=-1)

    def test_zero_mini_batch(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry)
        with pytest.raises(ConfigError):
            list(engine.run(stream, 0))

    def test_step_count(self, spec, graph_config, geometry, stream):
        engine = engine_for(spec, graph_config, geometry)
        engine.warm_start(stream[:10])
        assert engine.step_count == 0
        run_all(engine, stream[10:40], 10)
        assert engine.step_count == 3


class TestRejectedSlide:
    @pytest.fixture
    def small_window(self):
        return GraphConfig(
            radius=3.0,
            temporal_scale=0.011,
            max_degree=4,
            window=WindowSpec(by_count=3),
        )

    def test_duplicate_leaves_engine_untouched(self, spec, small_window, geometry):
        engine = engine_for(spec, small_window, geometry)
        engine.warm_start([Event(1, 1, 0, 1), Event(4, 4, 2, -1), Event(6, 5, 4, 1)])
        before = engine_state(engine)

        with pytest.raises(DuplicateTimestampError):
            engine.step([Event(5, 5, 10, 1), Event(5, 5, 10, -1)])
        assert_same_state(engine_state(engine), before)

        engine.step([Event(5, 5, 10, 1)])
        engine.step([Event(5, 6, 12, -1), Event(5, 5, 14, -1)])
        assert engine.step_count == 2
        assert engine.graph.node_ids() == [3, 4, 5]
        assert engine.compare().within(1e-10)

    def test_duplicate_of_window_event_leaves_engine_untouched(
        self, spec, small_window, geometry
    ):
        engine = engine_for(spec, small_window, geometry)
        engine.warm_start([Event(1, 1, 0, 1), Event(4, 4, 2, -1), Event(6, 5, 4, 1)])
        before = engine_state(engine)
        with pytest.raises(DuplicateTimestampError):
            engine.step([Event(6, 5, 4, -1)])
        assert_same_state(engine_state(engine), before)
        engine.step([Event(6, 5, 5, -1)])
        assert engine.compare().within(1e-10)

    def test_out_of_order_leaves_engine_untouched(
        self, pooled_spec, graph_config, geometry, stream
    ):
        engine = engine_for(pooled_spec, graph_config, geometry)
        engine.warm_start(stream[:200])
        before = engine_state(engine)
        with pytest.raises(OutOfOrderError):
            engine.step([stream[200], stream[0]])
        assert_same_state(engine_state(engine), before)
        run_all(engine, stream[200:260], 4)
        assert engine.compare().within(1e-10)


class TestRandomStreams:
    @settings(max_examples=12, deadline=None)
    @given(
        seed=st.integers(0, 2**16),
        widths=st.sampled_from([[1, 8, 8], [1, 8, 8, 8], [1, 8, 8, 8, 8]]),
        refresh=st.sampled_from([0, 1]),
        mini_batch=st.integers(1, 8),
    )
    def test_matches_batch(self, seed, widths, refresh, mini_batch):
        geometry = SensorGeometry(width=16, height=16)
        config = GraphConfig(
            radius=3.0,
            temporal_scale=0.011,
            max_degree=4,
            window=WindowSpec(by_count=100),
        )
        events = generate_uniform(geometry, 1e5, 3_000, seed=seed)
        spec = random_weights(widths, seed=seed, num_classes=4, state_hidden=4)
        engine = engine_for(spec, config, geometry, refresh_interval=refresh)
        for k, _ in enumerate(engine.run(events, mini_batch)):
            if k % 5:
                continue
            check = engine.compare()
            assert check.exact if refresh == 1 else check.within(1e-10)
        check = engine.compare()
        assert check.exact if refresh == 1 else check.within(1e-10)
        assert len(check.layer_errors) == len(widths)


class TestRelativeError:
    def test_zero_reference_uses_floor(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.ones(2), np.array([2.0, 4.0])) == pytest.approx(0.75)

    def test_empty(self):
        assert relative_error(np.zeros(0), np.zeros(0)) == 0.0
