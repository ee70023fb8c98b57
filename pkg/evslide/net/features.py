"""Slot-backed per-node feature storage."""

from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np


class FeatureMap:
    """Features f(i) of one layer's existing nodes, plus pre-activation sums s(i).

    Rows live in a growable array; ``slot`` maps node id to row. Freed rows
    are reused, so row order carries no meaning.
    """

    def __init__(
        self,
        width: int,
        dtype=np.float64,
        preactivation: bool = False,
        capacity: int = 16,
    ):
        self.width = width
        self.dtype = np.dtype(dtype)
        self.slot: Dict[int, int] = {}
        capacity = max(capacity, 1)
        self._free: List[int] = list(range(capacity - 1, -1, -1))
        self.f = np.zeros((capacity, width), dtype=self.dtype)
        self.s: Optional[np.ndarray] = (
            np.zeros((capacity, width), dtype=self.dtype) if preactivation else None
        )

    def __len__(self) -> int:
        return len(self.slot)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.slot

    @property
    def has_preactivation(self) -> bool:
        return self.s is not None

    def ids(self) -> List[int]:
        return sorted(self.slot)

    def _grow(self) -> None:
        capacity = self.f.shape[0]
        self._free.extend(range(2 * capacity - 1, capacity - 1, -1))
        self.f = np.concatenate([self.f, np.zeros_like(self.f)])
        if self.s is not None:
            self.s = np.concatenate([self.s, np.zeros_like(self.s)])

    def _claim(self, node_id: int) -> int:
        row = self.slot.get(node_id)
        if row is None:
            if not self._free:
                self._grow()
            row = self._free.pop()
            self.slot[node_id] = row
        return row

    def put(self, node_id: int, f: np.ndarray, s: Optional[np.ndarray] = None) -> None:
        row = self._claim(node_id)
        self.f[row] = f
        if s is not None:
            self.s[row] = s

    def put_many(
        self, node_ids: Sequence[int], f: np.ndarray, s: Optional[np.ndarray] = None
    ) -> None:
        rows = np.fromiter(
            (self._claim(i) for i in node_ids), dtype=np.intp, count=len(node_ids)
        )
        self.f[rows] = f
        if s is not None:
            self.s[rows] = s

    def drop(self, node_id: int) -> None:
        self._free.append(self.slot.pop(node_id))

    def feature(self, node_id: int) -> np.ndarray:
        return self.f[self.slot[node_id]]

    def preactivation(self, node_id: int) -> np.ndarray:
        return self.s[self.slot[node_id]]

    def rows(self, node_ids: Iterable[int]) -> np.ndarray:
        """Copy of the feature rows of ``node_ids``, in the given order."""
        slots = [self.slot[i] for i in node_ids]
        return self.f[slots]

    def matrix(self) -> np.ndarray:
        """All features, rows in ascending node id order."""
        return self.rows(self.ids())

    def snapshot(self, node_ids: Iterable[int]) -> Dict[int, np.ndarray]:
        """Copies of the current rows of the present ``node_ids``."""
        return {i: self.f[self.slot[i]].copy() for i in node_ids if i in self.slot}
