"""Fixed-capacity FIFO dictionary of instance subspaces (the negative set).

Bases are kept both as ``InstanceSubspace`` objects and in a zero-padded
(capacity, D, width) ring array so a whole snapshot can be scored with one
einsum.
"""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidConfig
from .subspace import InstanceSubspace


class SubspaceQueue:
    def __init__(self, capacity: int, width: int | None = None):
        if capacity < 1:
            raise InvalidConfig(f"queue capacity must be >= 1, got {capacity}", key="queue_capacity")
        self.capacity = int(capacity)
        self.width = width
        self._entries: deque[InstanceSubspace] = deque(maxlen=self.capacity)
        self._ring: np.ndarray | None = None
        self._head = 0  # slot the next entry is written to

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def dim(self) -> int | None:
        return self._entries[0].dim if self._entries else None

    def enqueue_batch(self, subspaces: Sequence[InstanceSubspace]) -> "SubspaceQueue":
        if not subspaces:
            return self
        d = self.dim if self.dim is not None else subspaces[0].dim
        for s in subspaces:
            if s.dim != d:
                raise DimensionMismatch(f"subspace dimension {s.dim} does not match queue dimension {d}")
        width = max(s.rank for s in subspaces)
        if self._ring is None:
            self.width = max(self.width or 0, width)
            self._ring = np.zeros((self.capacity, d, self.width))
        elif width > self.width:
            grown = np.zeros((self.capacity, d, width))
            grown[:, :, : self.width] = self._ring
            self._ring, self.width = grown, width
        for s in subspaces[-self.capacity :]:
            slot = self._ring[self._head]
            slot[:] = 0.0
            slot[:, : s.rank] = s.basis
            self._head = (self._head + 1) % self.capacity
        self._entries.extend(subspaces)
        return self

    def negatives_snapshot(self) -> tuple[InstanceSubspace, ...]:
        """Entries at call time, oldest first; later enqueues do not affect it."""
        return tuple(self._entries)

    def stacked_snapshot(self) -> np.ndarray:
        """Copy of the padded bases, oldest first, shape (len, D, max rank present)."""
        n = len(self._entries)
        if self._ring is None or n == 0:
            return np.zeros((0, self.dim or 0, self.width or 1))
        start = (self._head - n) % self.capacity
        order = (start + np.arange(n)) % self.capacity
        used = max(s.rank for s in self._entries)
        return self._ring[order, :, :used]

    def mean_rank(self) -> float:
        return float(np.mean([s.rank for s in self._entries])) if self._entries else 0.0
