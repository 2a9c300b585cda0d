"""Proportional prioritized replay over structured experience records."""
from __future__ import annotations

import numpy as np

from pqclab.errors import EmptyBuffer


class PERBuffer:
    """Ring buffer sampling record ``i`` with probability ``p_i**alpha / sum_j p_j**alpha``.

    Priorities are ``|loss| + eps``; new records enter at the current maximum
    priority. Importance weights ``(N * P(i))**-beta`` are normalized by the
    largest weight over the whole buffer, so they never exceed 1.
    """

    def __init__(self, capacity: int, dtype, alpha: float = 0.6, eps: float = 1e-3,
                 beta0: float = 0.4, beta1: float = 1.0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.beta0, self.beta1 = float(beta0), float(beta1)
        self.data = np.zeros(self.capacity, dtype=dtype)
        self.priority = np.zeros(self.capacity)
        self._pa = np.zeros(self.capacity)
        self._next = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def beta(self, progress: float) -> float:
        """Linear annealing from ``beta0`` to ``beta1`` as progress goes 0 -> 1."""
        p = min(max(progress, 0.0), 1.0)
        return self.beta0 + (self.beta1 - self.beta0) * p

    def add(self, records) -> np.ndarray:
        records = np.atleast_1d(records)
        idx = (self._next + np.arange(len(records))) % self.capacity
        self.data[idx] = records
        self.priority[idx] = self.max_priority
        self._pa[idx] = self.max_priority ** self.alpha
        self._next = int((self._next + len(records)) % self.capacity)
        self.size = min(self.capacity, self.size + len(records))
        return idx

    def set_priorities(self, indices, priorities) -> None:
        """Set raw priorities directly (no epsilon added)."""
        p = np.asarray(priorities, dtype=np.float64)
        self.priority[indices] = p
        self._pa[indices] = p ** self.alpha
        self.max_priority = max(self.max_priority, float(p.max(initial=0.0)))

    def update_priorities(self, indices, losses) -> None:
        self.set_priorities(indices, np.abs(np.asarray(losses, dtype=np.float64)) + self.eps)

    def probabilities(self) -> np.ndarray:
        pa = self._pa[:self.size]
        return pa / pa.sum()

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float | None = None):
        """Returns ``(records, is_weights, indices)``."""
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        beta = self.beta0 if beta is None else beta
        pa = self._pa[:self.size]
        cdf = np.cumsum(pa)
        total = cdf[-1]
        u = rng.random(batch_size) * total
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), self.size - 1)
        probs = pa[idx] / total
        p_min = pa.min() / total
        w = (self.size * probs) ** (-beta) / (self.size * p_min) ** (-beta)
        return self.data[idx], w, idx
