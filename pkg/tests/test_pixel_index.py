"""Tests for the pixel-queue index and its brute-force oracles."""

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evslide.config import SensorGeometry
from evslide.errors import DuplicateTimestampError, IndexQueryError, OutOfOrderError
from evslide.events import generate_uniform
from evslide.models import Event
from evslide.pixel_index import (
    PixelQueue,
    PixelQueueIndex,
    distance_field,
    knearest_bruteforce,
    radius_search_bruteforce,
)

GEOMETRY = SensorGeometry(width=16, height=16)


def filled(events, capacity=None):
    index = PixelQueueIndex(GEOMETRY, capacity)
    for nid, e in enumerate(events):
        index.insert(e, nid)
    return index


class TestDistanceField:
    def test_includes_origin(self):
        assert (0, 0, 0) in distance_field(2.0).offsets

    def test_strict_boundary(self):
        offsets = {(dx, dy) for dx, dy, _ in distance_field(5.0).offsets}
        assert (3, 4) not in offsets
        assert (3, 3) in offsets

    def test_is_lattice_disk(self):
        field = distance_field(3.5)
        expected = {
            (dx, dy)
            for dx in range(-4, 5)
            for dy in range(-4, 5)
            if dx * dx + dy * dy < 3.5**2
        }
        assert {(dx, dy) for dx, dy, _ in field.offsets} == expected

    def test_cached(self):
        assert distance_field(4.0) is distance_field(4.0)

    def test_bad_radius(self):
        with pytest.raises(IndexQueryError):
            distance_field(0.0)


class TestQueue:
    def test_append_and_pop(self):
        q = PixelQueue()
        q.append(1, 1, 0)
        q.append(5, -1, 1)
        assert q.popleft() == (1, 0)
        assert q.entries() == [(5, -1, 1)]
        assert q.popleft() == (5, 1)
        assert q.popleft() is None

    def test_compaction_keeps_order(self):
        q = PixelQueue()
        for t in range(200):
            q.append(t, 1, t)
        for t in range(150):
            assert q.popleft() == (t, t)
        assert [e[0] for e in q.entries()] == list(range(150, 200))
        assert q.is_sorted()


class TestInsert:
    def test_insert_into_empty(self):
        index = filled([Event(3, 4, 10, 1)])
        assert len(index.entries((3, 4))) == 1
        assert index.live_count == 1

    def test_capacity_evicts_oldest(self):
        index = PixelQueueIndex(GEOMETRY, capacity=2)
        assert index.insert(Event(1, 1, 10, 1), 0) is None
        assert index.insert(Event(1, 1, 20, 1), 1) is None
        assert index.insert(Event(1, 1, 30, -1), 2) == (10, 0)
        assert [e[2] for e in index.entries((1, 1))] == [1, 2]
        assert 0 not in index
        assert index.live_count == 2

    def test_duplicate_timestamp(self):
        index = filled([Event(1, 1, 10, 1)])
        with pytest.raises(DuplicateTimestampError, match="t=11"):
            index.insert(Event(1, 1, 10, -1), 1)

    def test_out_of_order(self):
        index = filled([Event(1, 1, 10, 1)])
        with pytest.raises(OutOfOrderError):
            index.insert(Event(1, 1, 5, 1), 1)

    def test_duplicate_id(self):
        index = filled([Event(1, 1, 10, 1)])
        with pytest.raises(IndexQueryError):
            index.insert(Event(2, 2, 10, 1), 0)

    def test_live_count_tracks_inserts_and_evictions(self):
        events = generate_uniform(GEOMETRY, 1e6, 100_000, seed=4)
        index = PixelQueueIndex(GEOMETRY, capacity=300)
        evicted = sum(index.insert(e, k) is not None for k, e in enumerate(events))
        assert index.live_count == len(events) - evicted
        index.check_invariants()


class TestRemoveOldest:
    def test_pops_head(self):
        index = filled([Event(2, 2, 1, 1), Event(2, 2, 5, 1)])
        assert index.remove_oldest((2, 2)) == (1, 0)
        assert index.entries((2, 2)) == [(5, 1, 1)]
        assert index.remove_oldest((2, 2)) == (5, 1)
        assert index.entries((2, 2)) == []

    def test_empty_queue(self):
        assert PixelQueueIndex(GEOMETRY).remove_oldest((0, 0)) is None

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=60))
    def test_interleaved_matches_list_simulation(self, ops):
        index = PixelQueueIndex(GEOMETRY)
        model = {x: deque() for x in range(4)}
        t = 0
        nid = 0
        for is_insert, x in ops:
            if is_insert:
                t += 1
                index.insert(Event(x, 0, t, 1), nid)
                model[x].append((t, 1, nid))
                nid += 1
            else:
                expected = model[x].popleft() if model[x] else None
                got = index.remove_oldest((x, 0))
                assert got == (None if expected is None else (expected[0], expected[2]))
        for x in range(4):
            assert index.entries((x, 0)) == list(model[x])
        index.check_invariants()


class TestRadiusSearch:
    def test_empty_index(self):
        assert PixelQueueIndex(GEOMETRY).radius_search((5, 5, 0), 3.0, 1.0) == set()

    def test_boundary_is_strict(self):
        index = filled([Event(8, 9, 100, 1)])
        assert index.radius_search((5, 5, 100), 5.0, 0.01) == set()
        assert index.radius_search((5, 5, 100), 5.01, 0.01) == {0}

    def test_time_bound(self):
        index = filled([Event(5, 5, 0, 1), Event(5, 5, 400, 1), Event(5, 5, 600, 1)])
        # R / alpha = 500 us at the query pixel
        assert index.radius_search((5, 5, 0), 5.0, 0.01) == {0, 1}

    def test_query_point_event(self):
        events = [Event(7, 7, 50, -1)]
        assert radius_search_bruteforce(events, (7, 7, 50), 0.1, 1.0) == {0}
        assert radius_search_bruteforce([], (7, 7, 50), 0.1, 1.0) == set()

    def test_outside_query(self):
        with pytest.raises(IndexQueryError):
            PixelQueueIndex(GEOMETRY).radius_search((16, 0, 0), 3.0, 1.0)

    def test_bad_parameters(self):
        index = PixelQueueIndex(GEOMETRY)
        with pytest.raises(IndexQueryError):
            index.radius_search((0, 0, 0), -1.0, 1.0)
        with pytest.raises(IndexQueryError):
            index.radius_search((0, 0, 0), 1.0, 0.0)

    def test_matches_bruteforce(self):
        events = generate_uniform(GEOMETRY, 1e6, 10_000, seed=9)
        index = filled(events)
        rng = np.random.default_rng(0)
        for _ in range(100):
            x, y, t = rng.integers(16), rng.integers(16), rng.integers(10_000)
            query = (int(x), int(y), int(t))
            assert index.radius_search(query, 3.0, 0.005) == radius_search_bruteforce(
                events, query, 3.0, 0.005
            )

    def test_examined_counter(self):
        index = filled(generate_uniform(GEOMETRY, 1e6, 2_000, seed=1))
        index.radius_search((8, 8, 1_000), 3.0, 0.01)
        assert index.examined > 0

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 50)),
            max_size=40,
        ),
        st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 50)),
        st.floats(0.5, 6.0),
        st.floats(0.01, 2.0),
    )
    def test_exactness_property(self, rows, query, radius, alpha):
        unique = sorted({(t, x, y) for x, y, t in rows})
        events = [Event(x, y, t, 1) for t, x, y in unique]
        index = filled(events)
        assert index.radius_search(query, radius, alpha) == radius_search_bruteforce(
            events, query, radius, alpha
        )


class TestKNearest:
    def test_fewer_than_cap(self):
        index = filled([Event(5, 5, 10, 1), Event(6, 5, 10, 1)])
        assert sorted(index.knearest_within((5, 5, 10), 3.0, 0.1, 8)) == [0, 1]

    def test_tie_breaks_on_earlier_t(self):
        index = filled([Event(5, 5, 90, 1), Event(5, 5, 110, 1)])
        assert index.knearest_within((5, 5, 100), 3.0, 0.1, 1) == [0]

    def test_tie_breaks_on_y_then_x(self):
        index = filled([Event(6, 5, 100, 1), Event(5, 6, 100, 1), Event(4, 5, 100, 1)])
        assert index.knearest_within((5, 5, 100), 3.0, 0.1, 3) == [2, 0, 1]

    def test_exclude_and_causal_bound(self):
        index = filled([Event(5, 5, 90, 1), Event(5, 5, 100, 1), Event(5, 5, 110, 1)])
        found = index.knearest_within((5, 5, 100), 3.0, 0.1, 4, exclude=1, t_max=100)
        assert found == [0]

    def test_bad_cap(self):
        with pytest.raises(IndexQueryError):
            PixelQueueIndex(GEOMETRY).knearest_within((0, 0, 0), 1.0, 1.0, 0)

    def test_matches_sort_then_truncate(self):
        events = generate_uniform(GEOMETRY, 1e6, 5_000, seed=2)
        index = filled(events)
        rng = np.random.default_rng(1)
        for _ in range(50):
            k = int(rng.integers(len(events)))
            e = events[k]
            query = (e.x, e.y, e.t)
            found = index.knearest_within(query, 3.0, 0.01, 6, exclude=k)
            assert found == knearest_bruteforce(events, query, 3.0, 0.01, 6, exclude=k)
