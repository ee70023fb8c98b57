"""Incrementally maintained global readout."""

from typing import Optional, Sequence, Tuple

import numpy as np

from .metrics import Component, FlopMeter
from .net.base import Readout
from .net.features import FeatureMap


class ReadoutCache:
    """Running mean and max over a layer's node features.

    The mean keeps a float64 running sum and a count. The max keeps, per
    channel, the current value and how many nodes attain it; a channel is
    rescanned only when its last attainer leaves or drops.
    """

    def __init__(self, mode: Readout, channels: int, dtype=np.float64):
        self.mode = Readout(mode)
        self.channels = channels
        self.dtype = np.dtype(dtype)
        self.count = 0
        self.total = np.zeros(channels, dtype=np.float64)
        self.peak = np.full(channels, -np.inf, dtype=self.dtype)
        self.attain = np.zeros(channels, dtype=np.int64)

    @property
    def tracks_mean(self) -> bool:
        return self.mode in (Readout.MEAN, Readout.MEAN_MAX)

    @property
    def tracks_max(self) -> bool:
        return self.mode in (Readout.MAX, Readout.MEAN_MAX)

    @classmethod
    def from_features(cls, mode: Readout, features: FeatureMap) -> "ReadoutCache":
        cache = cls(mode, features.width, features.dtype)
        matrix = features.matrix()
        cache.count = matrix.shape[0]
        if cache.count:
            cache.total = matrix.astype(np.float64).sum(axis=0)
            cache.peak = matrix.max(axis=0)
            cache.attain = (matrix == cache.peak).sum(axis=0)
        return cache

    def _rows(self, rows: Sequence[np.ndarray]) -> np.ndarray:
        if len(rows) == 0:
            return np.zeros((0, self.channels), dtype=self.dtype)
        return np.asarray(rows, dtype=self.dtype).reshape(len(rows), self.channels)

    def update(
        self,
        removed: Sequence[np.ndarray],
        added: Sequence[np.ndarray],
        features: FeatureMap,
        meter: Optional[FlopMeter] = None,
    ) -> None:
        """Retire ``removed`` rows and admit ``added`` rows.

        An updated node appears in both: old value removed, new value added.
        ``features`` must already hold the post-update rows.
        """
        out_rows = self._rows(removed)
        in_rows = self._rows(added)
        self.count += in_rows.shape[0] - out_rows.shape[0]
        touched = out_rows.shape[0] + in_rows.shape[0]

        if self.tracks_mean:
            self.total -= out_rows.astype(np.float64).sum(axis=0)
            self.total += in_rows.astype(np.float64).sum(axis=0)
            if meter is not None:
                meter.add(Component.READOUT, "sum", touched + 1, self.channels)

        if self.tracks_max:
            dirty = np.zeros(self.channels, dtype=bool)
            if out_rows.shape[0]:
                hits = (out_rows == self.peak).sum(axis=0)
                self.attain -= hits
                dirty = (hits > 0) & (self.attain <= 0)
            if in_rows.shape[0]:
                col_max = in_rows.max(axis=0)
                col_cnt = (in_rows == col_max).sum(axis=0)
                higher = (col_max > self.peak) & ~dirty
                equal = (col_max == self.peak) & ~dirty
                self.peak = np.where(higher, col_max, self.peak)
                tied = np.where(equal, self.attain + col_cnt, self.attain)
                self.attain = np.where(higher, col_cnt, tied)
            if dirty.any():
                self._rescan(dirty, features, meter)
            if meter is not None:
                meter.add(Component.READOUT, "compare", touched + 1, self.channels)

        if self.count == 0:
            self.total[:] = 0.0
            self.peak[:] = -np.inf
            self.attain[:] = 0

    def _rescan(
        self, channels: np.ndarray, features: FeatureMap, meter: Optional[FlopMeter]
    ) -> None:
        if not len(features):
            self.peak[channels] = -np.inf
            self.attain[channels] = 0
            return
        live = features.f[list(features.slot.values())][:, channels]
        col_max = live.max(axis=0)
        self.peak[channels] = col_max
        self.attain[channels] = (live == col_max).sum(axis=0)
        if meter is not None:
            meter.add(Component.READOUT, "compare", live.shape[0], int(channels.sum()))

    def vector(self) -> Tuple[np.ndarray, bool]:
        """Readout vector and whether it is the degenerate empty-graph zero."""
        if self.count == 0:
            return np.zeros(self.mode.width(self.channels), dtype=self.dtype), True
        mean = (self.total / self.count).astype(self.dtype)
        if self.mode is Readout.MEAN:
            return mean, False
        if self.mode is Readout.MAX:
            return self.peak.copy(), False
        return np.concatenate([mean, self.peak]), False
