"""Fixed-capacity reservoir replay buffer over (x, a, y) samples."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class BufferFrozenError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    a: int
    y: int
    id: int = -1


class ReplayBuffer:
    def __init__(self, capacity: int = 300):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.entries: list[Sample] = []
        self.stream_count = 0
        self.frozen = False

    def __len__(self) -> int:
        return len(self.entries)

    def offer(self, sample: Sample, rng: np.random.Generator) -> bool:
        """Reservoir step: keep the n-th offered item with probability capacity / n."""
        if self.frozen:
            raise BufferFrozenError("offer() on a frozen replay buffer")
        self.stream_count += 1
        if len(self.entries) < self.capacity:
            self.entries.append(sample)
            return True
        if self.capacity == 0:
            return False
        slot = int(rng.integers(0, self.stream_count))
        if slot < self.capacity:
            self.entries[slot] = sample
            return True
        return False

    def sample_batch(self, k: int, rng: np.random.Generator) -> list[Sample]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self.entries:
            return []
        idx = rng.permutation(len(self.entries))[: min(k, len(self.entries))]
        return [self.entries[i] for i in idx]

    def freeze(self) -> None:
        self.frozen = True

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return stack(self.entries)

    def dump_csv(self, path) -> None:
        """Write the stored samples in the dataset CSV schema."""
        from fairdd.data import write_csv

        x, a, y = self.arrays()
        write_csv(path, x, a, y, [s.id for s in self.entries])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for s in self.entries:
            h.update(np.ascontiguousarray(s.x, dtype=np.float64).tobytes())
            h.update(f"{s.a},{s.y},{s.id};".encode())
        return h.hexdigest()


def stack(samples: list[Sample], dim: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Samples -> (X, a, y) arrays; empty input gives empty arrays."""
    if not samples:
        return np.zeros((0, dim or 0)), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    x = np.stack([s.x for s in samples]).astype(np.float64)
    a = np.array([s.a for s in samples], dtype=int)
    y = np.array([s.y for s in samples], dtype=int)
    return x, a, y
