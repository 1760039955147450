"""CSV result files.

Floats are written with ``repr`` so every value re-parses to the identical
double.
"""

from __future__ import annotations

import csv
from typing import Dict, List, Sequence

import numpy as np

from .metrics import AccuracyMatrix
from .trainer import RunSummary


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def write_matrix_csv(summary: RunSummary, path) -> None:
    """Columns: run, stage, one per domain.  Empty cells where domain > stage."""
    names = summary.matrix.domain_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "stage"] + names)
        for r, run in enumerate(summary.runs):
            for t, name in enumerate(names):
                w.writerow([r, name] + [_fmt(v) for v in run.matrix.values[t]])
        for t, name in enumerate(names):
            w.writerow(["mean", name] + [_fmt(v) for v in summary.matrix.values[t]])


def read_matrix_csv(path) -> Dict[str, AccuracyMatrix]:
    """Matrices keyed by the run column ("0", "1", ..., "mean")."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][2:]
    out: Dict[str, AccuracyMatrix] = {}
    for row in rows[1:]:
        run, stage = row[0], row[1]
        m = out.setdefault(run, AccuracyMatrix(names))
        t = names.index(stage)
        for j, cell in enumerate(row[2:]):
            if cell:
                m.values[t, j] = float(cell)
    return out


SUMMARY_HEADER = ["strategy", "run", "avg_accuracy", "avg_forgetting"]


def summary_rows(summary: RunSummary) -> List[list]:
    rows = [[summary.strategy, r, _fmt(run.avg_accuracy), _fmt(run.avg_forgetting)]
            for r, run in enumerate(summary.runs)]
    rows.append([summary.strategy, "mean", _fmt(summary.avg_accuracy), _fmt(summary.avg_forgetting)])
    if summary.std_accuracy is not None:
        rows.append([summary.strategy, "std", _fmt(summary.std_accuracy), _fmt(summary.std_forgetting)])
    return rows


def write_summary_csv(summaries: Sequence[RunSummary], path, label_column: str = "strategy") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label_column] + SUMMARY_HEADER[1:])
        for s in summaries:
            w.writerows(summary_rows(s))


def read_csv_dicts(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_sweep_csv(capacities: Sequence[int], summaries: Sequence[RunSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["capacity", "mean_avg_accuracy", "std_avg_accuracy"])
        for cap, s in zip(capacities, summaries):
            w.writerow([cap, _fmt(s.avg_accuracy), _fmt(s.std_accuracy)])
