"""Facility weights from TOPSIS closeness to the ideal alternative."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

WEIGHT_FLOOR = 1e-6


class RankingError(ValueError):
    """Raised when an alternatives matrix cannot be ranked."""


@dataclass(frozen=True)
class CriteriaSpec:
    """Ordered criteria with priority weights and benefit/cost directions."""

    names: tuple[str, ...]
    priority_weights: tuple[float, ...]
    directions: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "priority_weights", tuple(float(w) for w in self.priority_weights))
        dirs = self.directions or ("benefit",) * len(self.names)
        object.__setattr__(self, "directions", tuple(dirs))
        if not (len(self.names) == len(self.priority_weights) == len(self.directions)):
            raise ValueError("names, priority_weights and directions must have equal length")
        if any(w <= 0 for w in self.priority_weights):
            raise ValueError("priority weights must be strictly positive")
        if abs(sum(self.priority_weights) - 1.0) > 1e-9:
            raise ValueError("priority weights must sum to 1")
        bad = [d for d in self.directions if d not in ("benefit", "cost")]
        if bad:
            raise ValueError(f"unknown criterion direction(s): {bad}")


def topsis_closeness(matrix, spec: CriteriaSpec) -> np.ndarray:
    """Raw closeness coefficients ``d- / (d+ + d-)`` for every row of ``matrix``."""
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("alternatives matrix must be 2-D with at least one row")
    if x.shape[1] != len(spec.names):
        raise ValueError(
            f"alternatives matrix has {x.shape[1]} columns, criteria spec has {len(spec.names)}"
        )
    if (x < 0).any():
        raise ValueError("alternatives matrix entries must be non-negative")
    norms = np.sqrt((x**2).sum(axis=0))
    zero = [spec.names[c] for c in np.flatnonzero(norms == 0)]
    if zero:
        raise RankingError(f"criterion column(s) {zero} are all zero; drop them before ranking")

    v = x / norms * np.asarray(spec.priority_weights)
    benefit = np.array([d == "benefit" for d in spec.directions])
    ideal = np.where(benefit, v.max(axis=0), v.min(axis=0))
    anti = np.where(benefit, v.min(axis=0), v.max(axis=0))
    d_plus = np.sqrt(((v - ideal) ** 2).sum(axis=1))
    d_minus = np.sqrt(((v - anti) ** 2).sum(axis=1))
    total = d_plus + d_minus
    # All rows identical: every alternative is the ideal one
    return np.divide(d_minus, total, out=np.ones_like(total), where=total > 0)


def topsis_rank(matrix, spec: CriteriaSpec, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Facility weights in ``(0, 1]``: TOPSIS closeness lifted to at least ``floor``."""
    return np.maximum(topsis_closeness(matrix, spec), floor)


def alternatives_matrix(facilities: Sequence, names: Sequence[str]) -> np.ndarray:
    """Stack the named attributes of each facility into an alternatives matrix."""
    rows = []
    for f in facilities:
        missing = [n for n in names if n not in f.attributes]
        if missing:
            raise ValueError(f"facility {f.id!r} lacks attribute(s) {missing}")
        rows.append([f.attributes[n] for n in names])
    return np.array(rows, dtype=float).reshape(len(rows), len(names))


def write_weights(path: str | Path, ids: Sequence[str], weights) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "weight"])
        for i, wt in zip(ids, weights):
            w.writerow([i, repr(float(wt))])
