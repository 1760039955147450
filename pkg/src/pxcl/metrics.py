"""Accuracy matrix and the two continual-learning summary metrics."""

from __future__ import annotations

from typing import Sequence

import numpy as np


class AccuracyMatrix:
    """``a[t, j]``: accuracy (%) on domain j after training stage t, for j <= t.

    Cells above the diagonal are NaN.
    """

    def __init__(self, domain_names: Sequence[str]):
        self.domain_names = list(domain_names)
        n = len(self.domain_names)
        self.values = np.full((n, n), np.nan)

    @classmethod
    def from_rows(cls, rows, domain_names=None) -> "AccuracyMatrix":
        """Build from ragged rows (row t holds t + 1 accuracies)."""
        rows = [list(r) for r in rows]
        names = domain_names or [f"D{j + 1}" for j in range(len(rows))]
        m = cls(names)
        for t, row in enumerate(rows):
            for j, acc in enumerate(row):
                m.set(t, j, acc)
        return m

    @classmethod
    def from_columns(cls, trajectories, domain_names=None) -> "AccuracyMatrix":
        """Build from per-domain trajectories (domain j has T - j entries)."""
        n = len(trajectories)
        m = cls(domain_names or [f"D{j + 1}" for j in range(n)])
        for j, traj in enumerate(trajectories):
            if len(traj) != n - j:
                raise ValueError(f"domain {j} trajectory has {len(traj)} entries, expected {n - j}")
            for k, acc in enumerate(traj):
                m.set(j + k, j, acc)
        return m

    @property
    def num_domains(self) -> int:
        return len(self.domain_names)

    def set(self, stage: int, domain: int, accuracy: float) -> None:
        if domain > stage:
            raise IndexError("accuracy matrix is lower-triangular (domain <= stage)")
        if not 0.0 <= accuracy <= 100.0:
            raise ValueError(f"accuracy {accuracy} outside [0, 100]")
        self.values[stage, domain] = accuracy

    def get(self, stage: int, domain: int) -> float:
        return float(self.values[stage, domain])

    def entries(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.values)))

    def is_complete(self) -> bool:
        return self.entries() == self.num_domains * (self.num_domains + 1) // 2

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AccuracyMatrix)
            and self.domain_names == other.domain_names
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def avg_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean accuracy over all domains after the final stage."""
    final = matrix.values[-1]
    if np.any(np.isnan(final)):
        raise ValueError("final stage row is incomplete")
    return float(final.mean())


def avg_forgetting(matrix: AccuracyMatrix) -> float:
    """Mean drop from each domain's best accuracy to its final accuracy.

    The last domain is excluded and every per-domain drop is clamped at 0.
    A single-domain matrix has zero forgetting.
    """
    a = matrix.values
    n = matrix.num_domains
    if n < 2:
        return 0.0
    if np.any(np.isnan(a[-1])):
        raise ValueError("final stage row is incomplete")
    drops = []
    for j in range(n - 1):
        column = a[j:, j]
        if np.any(np.isnan(column)):
            raise ValueError(f"domain {j} trajectory is incomplete")
        drops.append(max(0.0, float(column.max() - a[-1, j])))
    return float(np.mean(drops))
