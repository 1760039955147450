"""Replay memories: the class-balanced buffer and the reservoir baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import rng as rngmod


@dataclass
class Sample:
    image: np.ndarray  # 28x28 float64 in [0, 1]
    label: int
    domain_id: int = 0
    source_index: int = 0


def _as_generator(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return rngmod.substream(seed_or_rng, rngmod.BUFFER)


class ClassBalancedBuffer:
    """Per-class stores of equal capacity ``K = total_capacity // num_classes``.

    With the default ``policy="replace"`` an incoming sample always enters its
    class store; when the store is full it overwrites a uniformly chosen slot.
    ``policy="reservoir"`` keeps the newcomer only with probability K/seen_c
    (per-class reservoir sampling).
    """

    POLICIES = ("replace", "reservoir")

    def __init__(self, total_capacity: int, num_classes: int = 2, seed=0, policy: str = "replace"):
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        if total_capacity < num_classes:
            raise ValueError(
                f"total capacity {total_capacity} is smaller than the number of classes {num_classes}"
            )
        if policy not in self.POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.num_classes = num_classes
        self.per_class_capacity = total_capacity // num_classes
        self.policy = policy
        self.per_class: List[List[Sample]] = [[] for _ in range(num_classes)]
        self.seen_per_class = [0] * num_classes
        self.rng = _as_generator(seed)

    def __len__(self) -> int:
        return sum(len(store) for store in self.per_class)

    @property
    def capacity(self) -> int:
        return self.per_class_capacity * self.num_classes

    def samples(self) -> List[Sample]:
        return [s for store in self.per_class for s in store]

    def insert(self, sample: Sample) -> None:
        c = int(sample.label)
        if not 0 <= c < self.num_classes:
            raise ValueError(f"label {sample.label} outside [0, {self.num_classes})")
        store = self.per_class[c]
        self.seen_per_class[c] += 1
        k = self.per_class_capacity
        if len(store) < k:
            store.append(sample)
        elif self.policy == "replace":
            store[int(self.rng.integers(k))] = sample
        else:
            j = int(self.rng.integers(self.seen_per_class[c]))
            if j < k:
                store[j] = sample

    def sample(self, n: int) -> List[Sample]:
        """Draw ``n // num_classes`` per class, then top up from the whole buffer.

        The per-class phase draws without replacement (a store smaller than
        the quota gives everything it has); the top-up phase draws with
        replacement from the union of all stores.
        """
        if n < 1:
            raise ValueError("n must be positive")
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        quota = n // self.num_classes
        out: List[Sample] = []
        for store in self.per_class:
            take = min(quota, len(store))
            if take:
                idx = self.rng.choice(len(store), size=take, replace=False)
                out.extend(store[i] for i in idx)
        short = n - len(out)
        if short > 0:
            pool = self.samples()
            idx = self.rng.integers(0, len(pool), size=short)
            out.extend(pool[i] for i in idx)
        return out

    def write_snapshot(self, path) -> None:
        write_snapshot(self.samples(), path)


class ReservoirBuffer:
    """Classical reservoir sampling over the whole stream, class-agnostic."""

    def __init__(self, capacity: int, seed=0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.slots: List[Sample] = []
        self.seen = 0
        self.rng = _as_generator(seed)

    def __len__(self) -> int:
        return len(self.slots)

    def samples(self) -> List[Sample]:
        return list(self.slots)

    def insert(self, sample: Sample) -> None:
        self.seen += 1
        if len(self.slots) < self.capacity:
            self.slots.append(sample)
            return
        j = int(self.rng.integers(self.seen))
        if j < self.capacity:
            self.slots[j] = sample

    def sample(self, n: int) -> List[Sample]:
        if n < 1:
            raise ValueError("n must be positive")
        if not self.slots:
            raise ValueError("cannot sample from an empty buffer")
        m = len(self.slots)
        if n <= m:
            idx = self.rng.choice(m, size=n, replace=False)
        else:
            idx = np.concatenate([self.rng.permutation(m), self.rng.integers(0, m, size=n - m)])
        return [self.slots[i] for i in idx]

    def write_snapshot(self, path) -> None:
        write_snapshot(self.slots, path)


def write_snapshot(samples: Sequence[Sample], path) -> None:
    """Debug export: one CSV row (domain_id, label, source_index) per sample."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "label", "source_index"])
        for s in samples:
            writer.writerow([s.domain_id, s.label, s.source_index])


# Functional aliases.
def balanced_new(total_capacity: int, num_classes: int = 2, seed=0) -> ClassBalancedBuffer:
    return ClassBalancedBuffer(total_capacity, num_classes, seed)


def balanced_insert(buffer: ClassBalancedBuffer, sample: Sample) -> None:
    buffer.insert(sample)


def balanced_sample(buffer: ClassBalancedBuffer, n: int) -> List[Sample]:
    return buffer.sample(n)


def reservoir_insert(buffer: ReservoirBuffer, sample: Sample) -> None:
    buffer.insert(sample)


def reservoir_sample(buffer: ReservoirBuffer, n: int) -> List[Sample]:
    return buffer.sample(n)
