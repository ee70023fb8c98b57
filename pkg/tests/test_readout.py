"""Tests for the incrementally maintained readout."""

import numpy as np
import pytest

from evslide.metrics import Component, FlopMeter
from evslide.net import FeatureMap, Readout, readout
from evslide.readout import ReadoutCache


def feature_map(rows, width=3):
    fm = FeatureMap(width)
    for nid, row in rows.items():
        fm.put(nid, np.asarray(row, dtype=np.float64))
    return fm


def expected(fm, mode):
    return readout(fm.matrix(), mode)[0]


class TestReadoutCache:
    def test_empty_is_degenerate(self):
        vec, degenerate = ReadoutCache(Readout.MEAN_MAX, 3).vector()
        assert degenerate
        np.testing.assert_array_equal(vec, np.zeros(6))

    def test_add_below_max_keeps_max(self):
        fm = feature_map({0: [1.0, 5.0, 2.0], 1: [3.0, 0.0, 2.0]})
        cache = ReadoutCache.from_features(Readout.MEAN_MAX, fm)
        row = np.array([0.5, 1.0, 1.0])
        fm.put(2, row)
        cache.update([], [row], fm)
        vec, degenerate = cache.vector()
        assert not degenerate
        np.testing.assert_array_equal(vec[3:], [3.0, 5.0, 2.0])
        np.testing.assert_allclose(vec[:3], fm.matrix().mean(axis=0))

    def test_removing_unique_argmax_rescans(self):
        fm = feature_map({0: [1.0, 5.0, 2.0], 1: [3.0, 0.0, 2.0], 2: [2.0, 4.0, -1.0]})
        cache = ReadoutCache.from_features(Readout.MAX, fm)
        gone = fm.feature(0).copy()
        fm.drop(0)
        meter = FlopMeter()
        cache.update([gone], [], fm, meter)
        np.testing.assert_array_equal(cache.vector()[0], expected(fm, Readout.MAX))
        assert meter.counts[Component.READOUT] > 0

    def test_shared_max_survives_one_removal(self):
        fm = feature_map({0: [2.0], 1: [2.0]}, width=1)
        cache = ReadoutCache.from_features(Readout.MAX, fm)
        gone = fm.feature(0).copy()
        fm.drop(0)
        cache.update([gone], [], fm)
        assert cache.attain[0] == 1
        assert cache.vector()[0][0] == 2.0

    def test_update_in_place(self):
        fm = feature_map({0: [1.0, 1.0, 1.0], 1: [4.0, 4.0, 4.0]})
        cache = ReadoutCache.from_features(Readout.MEAN_MAX, fm)
        old = fm.feature(1).copy()
        fm.put(1, np.array([0.0, 9.0, 0.5]))
        cache.update([old], [fm.feature(1).copy()], fm)
        np.testing.assert_allclose(cache.vector()[0], expected(fm, Readout.MEAN_MAX))

    def test_draining_resets(self):
        fm = feature_map({0: [1.0, 2.0, 3.0]})
        cache = ReadoutCache.from_features(Readout.MEAN, fm)
        gone = fm.feature(0).copy()
        fm.drop(0)
        cache.update([gone], [], fm)
        vec, degenerate = cache.vector()
        assert degenerate
        np.testing.assert_array_equal(vec, np.zeros(3))

    @pytest.mark.parametrize("mode", list(Readout))
    def test_random_trace_matches_scan(self, mode):
        rng = np.random.default_rng(7)
        fm = FeatureMap(4)
        cache = ReadoutCache(mode, 4)
        next_id = 0
        for _ in range(300):
            live = fm.ids()
            op = rng.integers(3) if live else 0
            if op == 0:
                # small integer grid forces frequent ties on the max
                row = rng.integers(-3, 4, size=4).astype(np.float64)
                fm.put(next_id, row)
                cache.update([], [row], fm)
                next_id += 1
            elif op == 1:
                nid = int(rng.choice(live))
                gone = fm.feature(nid).copy()
                fm.drop(nid)
                cache.update([gone], [], fm)
            else:
                nid = int(rng.choice(live))
                old = fm.feature(nid).copy()
                new = rng.integers(-3, 4, size=4).astype(np.float64)
                fm.put(nid, new)
                cache.update([old], [new], fm)
            if len(fm):
                np.testing.assert_allclose(
                    cache.vector()[0], expected(fm, mode), rtol=1e-12
                )
            assert cache.count == len(fm)
