"""Spatial Interaction Coverage baseline.

For demand node ``i`` and facility ``j`` the interaction is

    S_ij = a_i w_j x_j / d_ij  /  (sum_{k in N_i} w_k x_k / d_ik + 1)

with ``N_i`` the facilities within walking distance of ``i``. The total
interaction is maximized subject to exactly ``p`` active facilities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qubo import BinarySolution, PartitionScheme
from .solvers import bit_chunks
from .spatial import MIN_DISTANCE_M, SpatialModel

SIC_EXHAUSTIVE_MAX_F = 24


@dataclass(frozen=True, eq=False)
class SicModel:
    """Dense demand-by-facility interaction data.

    ``strength[i, j] = w_j / d_ij`` and ``within[i, j]`` marks ``j in N_i``.
    """

    populations: np.ndarray
    weights: np.ndarray
    strength: np.ndarray
    within: np.ndarray

    @classmethod
    def from_spatial(cls, model: SpatialModel, weights=None) -> "SicModel":
        w = model.weights() if weights is None else np.asarray(weights, dtype=float)
        d = np.maximum(model.distances.T, MIN_DISTANCE_M)
        within = model.coverage_mask().T
        return cls(model.populations, w, w[None, :] / d, within)

    @property
    def n_facilities(self) -> int:
        return self.weights.size

    def neighborhood(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.within[i])


def sic_terms(model: SicModel, x, restrict: bool = True) -> np.ndarray:
    """The ``(|D|, |F|)`` matrix of interaction terms ``S_ij``."""
    x = np.asarray(x, dtype=float)
    covered = model.strength * model.within
    denom = covered @ x + 1.0
    numer = (covered if restrict else model.strength) * x[None, :]
    return model.populations[:, None] * numer / denom[:, None]


def sic_objective(model: SicModel, x, restrict: bool = True) -> float:
    """Total interaction. ``restrict=False`` lets facilities outside ``N_i`` add numerator terms."""
    return float(sic_terms(model, x, restrict).sum())


def _batch_objective(model: SicModel, bits: np.ndarray, restrict: bool) -> np.ndarray:
    covered = model.strength * model.within
    s = bits @ covered.T
    if restrict:
        num = s
    else:
        num = bits @ model.strength.T
    return (model.populations[None, :] * num / (s + 1.0)).sum(axis=1)


def _solution(model: SicModel, bits, p: int, restrict: bool) -> BinarySolution:
    bits = np.asarray(bits, dtype=np.int8).copy()
    bits.setflags(write=False)
    violation = PartitionScheme.single(bits.size, p).violation(bits)
    return BinarySolution(bits, sic_objective(model, bits, restrict), violation == 0, violation)


def sic_exhaustive(model: SicModel, p: int, restrict: bool = True) -> BinarySolution:
    """Exact maximizer over all ``p``-subsets, ties to the lexicographically smallest vector."""
    n = model.n_facilities
    if n > SIC_EXHAUSTIVE_MAX_F:
        raise ValueError(f"exhaustive SIC refuses |F|={n} (limit {SIC_EXHAUSTIVE_MAX_F})")
    best_val, best_bits = -math.inf, None
    for bits in bit_chunks(n):
        bits = bits[bits.sum(axis=1) == p]
        if bits.shape[0] == 0:
            continue
        vals = _batch_objective(model, bits.astype(float), restrict)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_bits = float(vals[i]), bits[i]
    return _solution(model, best_bits, p, restrict)


def sic_local_search(model: SicModel, p: int, restrict: bool = True, tol: float = 1e-12) -> BinarySolution:
    """Best-improvement swap search from the ``p`` highest-weight facilities."""
    n = model.n_facilities
    order = np.lexsort((np.arange(n), -model.weights))
    x = np.zeros(n)
    x[order[:p]] = 1.0
    covered = model.strength * model.within
    num_src = covered if restrict else model.strength
    a = model.populations
    current = sic_objective(model, x, restrict)
    while 0 < p < n:
        on = np.flatnonzero(x == 1)
        off = np.flatnonzero(x == 0)
        s = covered @ x
        t = num_src @ x
        # swap (out, in): s' = s - covered[:, out] + covered[:, in]
        s_new = s[None, None, :] - covered[:, on].T[:, None, :] + covered[:, off].T[None, :, :]
        t_new = t[None, None, :] - num_src[:, on].T[:, None, :] + num_src[:, off].T[None, :, :]
        vals = (a * t_new / (s_new + 1.0)).sum(axis=2)
        flat = int(np.argmax(vals))
        i_out, i_in = divmod(flat, off.size)
        if vals[i_out, i_in] <= current + tol * max(1.0, abs(current)):
            break
        x[on[i_out]] = 0.0
        x[off[i_in]] = 1.0
        current = sic_objective(model, x, restrict)
    return _solution(model, x, p, restrict)


def sic_solve(model: SicModel, p: int, mode: str = "local-search", restrict: bool = True) -> BinarySolution:
    if not 1 <= p <= model.n_facilities:
        raise ValueError(f"p must lie in [1, {model.n_facilities}]")
    if mode == "exhaustive":
        return sic_exhaustive(model, p, restrict)
    if mode == "local-search":
        return sic_local_search(model, p, restrict)
    raise ValueError(f"unknown SIC mode {mode!r}")
