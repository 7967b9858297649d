"""BraTS-style rank aggregation of competing strategies.

Within every (patient, class, metric) cell the strategies are ranked with
fractional ranks (ties share the mean of the positions they span).  A
patient's score is the mean of its cell ranks and the global score is the mean
over patients.  Lower is better.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .metrics import DICE_METRICS, HD_METRICS, MetricRecord

__all__ = [
    "IncompleteGridError",
    "RankReport",
    "RankingGrid",
    "direction_for",
    "global_rank",
    "per_patient_rank",
    "rank_cell",
]

HIGHER, LOWER = "higher", "lower"
CellKey = tuple[str, str, str]  # (patient_id, class_name, metric)


class IncompleteGridError(ValueError):
    """Some cell lacks a value for some strategy, or the grid is empty."""


def direction_for(metric: str) -> str:
    if metric in DICE_METRICS:
        return HIGHER
    if metric in HD_METRICS:
        return LOWER
    raise ValueError(f"no ranking direction known for metric {metric!r}")


def rank_cell(values: Mapping[str, float], direction: str) -> dict[str, float]:
    """Fractional ranks, 1 = best.  Ties need exact equality."""
    if len(values) < 2:
        raise ValueError("ranking needs at least two strategies")
    if direction not in (HIGHER, LOWER):
        raise ValueError(f"direction must be {HIGHER!r} or {LOWER!r}")
    for name, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v!r} for strategy {name!r}")
    sign = -1.0 if direction == HIGHER else 1.0
    ordered = sorted(values, key=lambda s: sign * values[s])
    ranks: dict[str, float] = {}
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and values[ordered[j + 1]] == values[ordered[i]]:
            j += 1
        # positions i..j (0-based) share rank mean(i+1 .. j+1)
        shared = (i + j) / 2 + 1
        for s in ordered[i : j + 1]:
            ranks[s] = shared
        i = j + 1
    return ranks


@dataclass(frozen=True)
class RankingGrid:
    """Complete table of values: every cell has one value per strategy."""

    strategies: tuple[str, ...]
    cells: Mapping[CellKey, Mapping[str, float]]

    def __post_init__(self) -> None:
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("strategy ids must be unique")
        if len(self.strategies) < 2:
            raise ValueError("ranking needs at least two strategies")
        expected = set(self.strategies)
        for key, row in self.cells.items():
            if set(row) != expected:
                missing = sorted(expected - set(row))
                raise IncompleteGridError(f"cell {key} is missing strategies {missing}")
            for s, v in row.items():
                if not math.isfinite(v):
                    raise ValueError(f"non-finite value for {s!r} in cell {key}")
        index: dict[str, list[CellKey]] = defaultdict(list)
        for key in self.cells:
            index[key[0]].append(key)
        object.__setattr__(self, "_index", {p: sorted(keys) for p, keys in index.items()})

    @classmethod
    def from_records(cls, records: Iterable[MetricRecord], strategies: Sequence[str] | None = None) -> RankingGrid:
        cells: dict[CellKey, dict[str, float]] = defaultdict(dict)
        seen: list[str] = []
        for r in records:
            key = (r.patient_id, r.class_name, r.metric)
            if r.strategy_id in cells[key]:
                raise ValueError(f"duplicate record for {r.strategy_id!r} in cell {key}")
            cells[key][r.strategy_id] = r.value
            if r.strategy_id not in seen:
                seen.append(r.strategy_id)
        return cls(tuple(strategies) if strategies is not None else tuple(seen), dict(cells))

    @property
    def patients(self) -> list[str]:
        return sorted(self._index)

    def cells_for(self, patient_id: str) -> list[CellKey]:
        return self._index.get(patient_id, [])

    def check_complete(self) -> None:
        """Every patient must carry the same (class, metric) cells."""
        if not self.cells:
            raise IncompleteGridError("grid has no cells")
        by_patient = {p: {(c, m) for _, c, m in keys} for p, keys in self._index.items()}
        shapes = {frozenset(v) for v in by_patient.values()}
        if len(shapes) > 1:
            union = frozenset().union(*shapes)
            for p, have in sorted(by_patient.items()):
                if have != union:
                    raise IncompleteGridError(f"patient {p!r} lacks cells {sorted(union - have)}")


@dataclass(frozen=True)
class RankReport:
    per_patient: Mapping[str, Mapping[str, float]]
    global_ranks: Mapping[str, float]
    ordering: tuple[str, ...]

    @property
    def winner(self) -> str:
        return self.ordering[0]


def per_patient_rank(grid: RankingGrid, patient_id: str) -> dict[str, float]:
    keys = grid.cells_for(patient_id)
    if not keys:
        raise IncompleteGridError(f"no cells for patient {patient_id!r}")
    totals = dict.fromkeys(grid.strategies, 0.0)
    for key in keys:
        for s, r in rank_cell(grid.cells[key], direction_for(key[2])).items():
            totals[s] += r
    return {s: totals[s] / len(keys) for s in grid.strategies}


def global_rank(grid: RankingGrid) -> RankReport:
    """Average per-patient ranks; ``ordering`` is ascending, ties kept in strategy order."""
    grid.check_complete()
    per_patient = {p: per_patient_rank(grid, p) for p in grid.patients}
    n = len(per_patient)
    global_ranks = {s: math.fsum(r[s] for r in per_patient.values()) / n for s in grid.strategies}
    ordering = tuple(sorted(grid.strategies, key=lambda s: global_ranks[s]))
    return RankReport(per_patient, global_ranks, ordering)
