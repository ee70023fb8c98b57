"""Tests for voxel pooling and incremental pooled-graph maintenance."""

import numpy as np
import pytest

from evslide.config import SensorGeometry
from evslide.graph import EventGraph, build_graph
from evslide.models import Event
from evslide.net import FeatureMap, PooledGraph, VoxelGrid, VoxelPool
from evslide.net.pooling import voxel_pool_forward


def pool_layer(voxel=(4.0, 4.0, 500.0), aggr="mean", channels=2):
    return VoxelPool(voxel=voxel, aggr=aggr, channels=channels)


def features_for(graph, width=2, seed=0):
    rng = np.random.default_rng(seed)
    fm = FeatureMap(width)
    for i in graph.node_ids():
        fm.put(i, rng.normal(size=width))
    return fm


def pooled_over(layer, graph, source=None):
    pooled = PooledGraph.for_layer(layer, graph)
    return pooled.build(graph if source is None else source)


def assert_same_pooled(a: PooledGraph, b: PooledGraph):
    assert a.node_ids() == b.node_ids()
    assert a.neighbor_lists() == b.neighbor_lists()
    assert a.members == b.members
    for pid in a.node_ids():
        assert a.position(pid) == b.position(pid)


class TestVoxelGrid:
    def test_ids_sort_by_t_then_y_then_x(self):
        geometry = SensorGeometry(width=16, height=16)
        grid = VoxelGrid.for_geometry((4.0, 4.0, 100.0), geometry)
        a = grid.voxel_id((15.0, 0.0, 0.0))
        b = grid.voxel_id((0.0, 4.0, 0.0))
        c = grid.voxel_id((0.0, 0.0, 100.0))
        assert a < b < c
        assert grid.unravel(b) == (0, 1, 0)


class TestPoolForward:
    def test_single_voxel_mean(self, graph_config, geometry):
        events = [Event(0, 0, 0, 1), Event(1, 0, 10, 1), Event(1, 1, 20, -1)]
        graph = build_graph(events, graph_config, geometry)
        fm = features_for(graph)
        pooled, out = voxel_pool_forward(graph, fm, pool_layer(), graph)
        assert len(pooled) == 1
        pid = pooled.node_ids()[0]
        np.testing.assert_allclose(out.feature(pid), fm.matrix().mean(axis=0))
        np.testing.assert_allclose(pooled.position(pid), (2 / 3, 1 / 3, 10.0))

    def test_max_aggregation(self, graph_config, geometry):
        events = [Event(0, 0, 0, 1), Event(1, 0, 10, 1)]
        graph = build_graph(events, graph_config, geometry)
        fm = features_for(graph, seed=2)
        pooled, out = voxel_pool_forward(graph, fm, pool_layer(aggr="max"), graph)
        np.testing.assert_array_equal(
            out.feature(pooled.node_ids()[0]), fm.matrix().max(axis=0)
        )

    def test_distinct_voxels_are_identity(self, graph_config, geometry):
        events = [Event(0, 0, 0, 1), Event(8, 0, 10, 1), Event(0, 8, 20, -1)]
        graph = build_graph(events, graph_config, geometry)
        fm = features_for(graph)
        pooled, out = voxel_pool_forward(graph, fm, pool_layer(), graph)
        assert len(pooled) == 3
        for i in graph.node_ids():
            pid = pooled.voxel_of[i]
            np.testing.assert_array_equal(out.feature(pid), fm.feature(i))
            assert pooled.position(pid) == graph.position(i)

    def test_matches_bucketing(self, graph_config, geometry, stream):
        graph = build_graph(stream[:200], graph_config, geometry)
        fm = features_for(graph, seed=4)
        layer = pool_layer()
        pooled, out = voxel_pool_forward(graph, fm, layer, graph)

        buckets = {}
        for i in graph.node_ids():
            x, y, t = graph.position(i)
            key = (int(x // 4), int(y // 4), int(t // 500))
            buckets.setdefault(key, []).append(i)
        assert len(pooled) == len(buckets)
        for key, members in buckets.items():
            pid = pooled.voxel_of[members[0]]
            assert pooled.members[pid] == members
            np.testing.assert_allclose(out.feature(pid), fm.rows(members).mean(axis=0))

    def test_pooled_edges_follow_radius_rule(self, graph_config, geometry, stream):
        graph = build_graph(stream[:200], graph_config, geometry)
        pooled = PooledGraph.for_layer(pool_layer(), graph).build(graph)
        r2 = pooled.radius**2
        for j, i in pooled.edges():
            a, b = pooled.position(j), pooled.position(i)
            d2 = (
                (a[0] - b[0]) ** 2
                + (a[1] - b[1]) ** 2
                + (pooled.alpha * (a[2] - b[2])) ** 2
            )
            assert d2 < r2
        degrees = [len(n) for n in pooled.neighbor_lists().values()]
        assert max(degrees, default=0) <= pooled.d_max


class TestPooledUpdate:
    @pytest.mark.parametrize("size", [1, 5])
    def test_update_matches_rebuild(self, graph_config, geometry, stream, size):
        graph = EventGraph(graph_config, geometry)
        graph.slide(stream[:200])
        layer = pool_layer()
        pooled = PooledGraph.for_layer(layer, graph).build(graph)
        for lo in range(200, 400, size):
            changes = graph.slide(stream[lo : lo + size])
            change = pooled.update(sorted(changes.v_add), sorted(changes.v_del), graph)
            assert not change.v_add & change.v_del
            assert not change.regrouped & (change.v_add | change.v_del)
            fresh = PooledGraph.for_layer(layer, graph).build(graph)
            assert_same_pooled(pooled, fresh)

    def test_relocated_voxel_reports_prior_position(self, graph_config, geometry):
        graph = EventGraph(graph_config, geometry)
        graph.slide([Event(0, 0, 0, 1)])
        pooled = PooledGraph.for_layer(pool_layer(), graph).build(graph)
        pid = pooled.node_ids()[0]
        before = pooled.position(pid)
        changes = graph.slide([Event(2, 2, 10, 1)])
        change = pooled.update(sorted(changes.v_add), [], graph)
        assert change.delta.moved == {pid}
        assert change.delta.prior_positions[pid] == before
        assert pooled.position(pid) == (1.0, 1.0, 5.0)

    def test_emptied_voxel_is_deleted(self, geometry):
        from evslide.config import GraphConfig, WindowSpec

        config = GraphConfig(
            radius=3.0, temporal_scale=0.01, window=WindowSpec(by_count=1)
        )
        graph = EventGraph(config, geometry)
        graph.slide([Event(0, 0, 0, 1)])
        pooled = PooledGraph.for_layer(pool_layer(), graph).build(graph)
        old = pooled.node_ids()[0]
        changes = graph.slide([Event(12, 12, 10, 1)])
        change = pooled.update(sorted(changes.v_add), sorted(changes.v_del), graph)
        assert change.v_del == {old}
        assert len(change.v_add) == 1
        assert old in change.delta.prior_positions

    def test_moved_source_node_changes_voxel(self, graph_config, geometry):
        graph = EventGraph(graph_config, geometry)
        graph.slide([Event(0, 0, 0, 1)])
        inner = pooled_over(pool_layer((4.0, 4.0, 1000.0)), graph)
        outer_layer = pool_layer((1.0, 1.0, 1000.0))
        outer = pooled_over(outer_layer, graph, inner)
        assert outer.members == {0: [0]}

        changes = graph.slide([Event(3, 3, 10, 1)])
        inner_change = inner.update(sorted(changes.v_add), [], graph)
        assert inner_change.delta.moved == {0}
        assert inner.position(0) == (1.5, 1.5, 5.0)

        change = outer.update(
            sorted(inner_change.v_add),
            sorted(inner_change.v_del),
            inner,
            sorted(inner_change.delta.moved),
        )
        assert outer.voxel_of[0] == 17
        assert change.v_del == {0}
        assert change.v_add == {17}
        assert_same_pooled(outer, pooled_over(outer_layer, graph, inner))

    @pytest.mark.parametrize("size", [1, 3])
    def test_stacked_update_matches_rebuild(self, graph_config, geometry, stream, size):
        graph = EventGraph(graph_config, geometry)
        graph.slide(stream[:200])
        inner_layer = pool_layer((2.0, 2.0, 300.0))
        outer_layer = pool_layer((5.0, 5.0, 900.0))
        inner = pooled_over(inner_layer, graph)
        outer = pooled_over(outer_layer, graph, inner)
        for lo in range(200, 500, size):
            changes = graph.slide(stream[lo : lo + size])
            inner_change = inner.update(
                sorted(changes.v_add), sorted(changes.v_del), graph
            )
            outer.update(
                sorted(inner_change.v_add),
                sorted(inner_change.v_del),
                inner,
                sorted(inner_change.delta.moved),
            )
            assert_same_pooled(inner, pooled_over(inner_layer, graph))
            assert_same_pooled(outer, pooled_over(outer_layer, graph, inner))
