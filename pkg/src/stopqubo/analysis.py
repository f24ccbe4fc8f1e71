"""Coverage statistics, bound-ratio sweeps and the QUBO-vs-SIC comparison."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from pathlib import Path
from typing import Sequence

import numpy as np

from .qubo import (
    ModelParams,
    build_partitioned,
    build_single_constraint,
    build_unconstrained,
    objective_value,
    partition_for_p,
    upper_bound_diagonal,
    upper_bound_eigen,
)
from .sic import SicModel, sic_solve
from .solvers import SolverConfig, hybrid_solve
from .spatial import SpatialModel, perturb_instance

WILCOXON_EXACT_MAX_N = 25


# --- coverage ---------------------------------------------------------------


@dataclass(frozen=True)
class CoverageProfile:
    counts: np.ndarray
    min: int
    median: int
    max: int
    covered_count: int


def lower_median(values) -> int:
    v = sorted(int(c) for c in values)
    return v[(len(v) - 1) // 2]


def coverage_profile(model: SpatialModel, x) -> CoverageProfile:
    """Active facilities within walking distance (``R0``) of each demand node."""
    x = np.asarray(x, dtype=int)
    if x.shape != (model.n_facilities,):
        raise ValueError(f"expected {model.n_facilities} facility bits")
    counts = x @ model.coverage_mask().astype(int)
    if counts.size == 0:
        return CoverageProfile(counts, 0, 0, 0, 0)
    return CoverageProfile(
        counts=counts,
        min=int(counts.min()),
        median=lower_median(counts),
        max=int(counts.max()),
        covered_count=int((counts >= 1).sum()),
    )


# --- bound sweep ------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    p: int
    best: float
    diag_bound: float
    eigen_bound: float
    ratio: float
    feasible: bool
    bits: tuple[int, ...]


def bound_ratio_sweep(
    model: SpatialModel,
    weights,
    params: ModelParams,
    p_values: Sequence[int],
    batch_size: int = 5,
    config: SolverConfig | None = None,
    backend=None,
) -> list[SweepRow]:
    """Solve the partitioned problem for each ``p`` and compare with both upper bounds.

    ``best`` is the unpenalized objective of the returned vector; on a
    feasible vector it equals the penalized one.
    """
    Q = build_unconstrained(model, weights, params)
    rows = []
    for p in p_values:
        part = partition_for_p(model.n_facilities, p, batch_size)
        Qhat = build_partitioned(model, weights, ModelParams(p, params.alpha, params.beta, params.gamma), part)
        report = hybrid_solve(Qhat, config, backend)
        best = objective_value(Q, report.best.bits)
        diag = upper_bound_diagonal(Q, p)
        eig = upper_bound_eigen(Q, p)
        ratio = best / eig if eig != 0 else float("nan")
        rows.append(SweepRow(p, best, diag, eig, ratio, report.best.feasible, tuple(int(b) for b in report.best.bits)))
    return rows


# --- Wilcoxon signed-rank ---------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    exact: bool


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_upper_tail(ranks: np.ndarray, w_obs: float) -> tuple[float, float]:
    """``P(W >= w_obs)`` and ``P(W <= w_obs)`` under the sign-flip null."""
    doubled = np.rint(2 * ranks).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    target = int(round(2 * w_obs))
    space = 2 ** len(doubled)
    upper = int(counts[target:].sum())
    lower = int(counts[: target + 1].sum())
    return float(upper) / space, float(lower) / space


def wilcoxon_signed_rank(
    differences, alternative: str = "greater", zero_method: str = "wilcox"
) -> WilcoxonResult:
    """One-sample Wilcoxon signed-rank test on paired differences.

    ``W`` is the sum of ranks of the positive differences. Zeros are dropped
    (``zero_method="wilcox"``) or ranked and then dropped (``"pratt"``).
    Up to 25 nonzero differences the null distribution is counted exactly;
    beyond that a tie- and continuity-corrected normal approximation is used.
    """
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(differences, dtype=float)
    if zero_method == "wilcox":
        d = d[d != 0]
        ranks = _average_ranks(np.abs(d))
    elif zero_method == "pratt":
        ranks = _average_ranks(np.abs(d))
        keep = d != 0
        d, ranks = d[keep], ranks[keep]
    else:
        raise ValueError(f"unknown zero_method {zero_method!r}")
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero; the signed-rank test is undefined")
    w = float(ranks[d > 0].sum())

    if n <= WILCOXON_EXACT_MAX_N:
        upper, lower = _exact_upper_tail(ranks, w)
        exact = True
    else:
        mean = ranks.sum() / 2
        var = (ranks**2).sum() / 4
        sd = math.sqrt(var)
        upper = _norm_sf((w - mean - 0.5) / sd)
        lower = _norm_sf((mean - w - 0.5) / sd)
        exact = False
    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2 * min(upper, lower))
    return WilcoxonResult(w, p, n, exact)


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2))


# --- comparison experiment --------------------------------------------------


@dataclass(frozen=True)
class ComparisonRecord:
    instance: int
    seed: int
    p: int
    d: int
    qubo_covered: int
    sic_covered: int
    qubo_objective: float
    sic_objective: float


@dataclass(frozen=True)
class ComparisonSummary:
    p: int
    avg_d: float
    statistic: float
    p_value: float
    reject: bool


def instance_seeds(seed: int, n_instances: int) -> list[int]:
    """Per-instance seeds derived from the master seed, independent of scheduling."""
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(n_instances)]


def _run_instance(
    base_model: SpatialModel,
    p_values: Sequence[int],
    instance: int,
    seed: int,
    max_offset: float,
    alpha: float,
    beta: float,
    config: SolverConfig,
    sic_mode: str,
) -> list[ComparisonRecord]:
    model = perturb_instance(base_model, max_offset, (0.0, 1.0), seed)
    w = model.weights()
    sic_model = SicModel.from_spatial(model, w)
    out = []
    for p in p_values:
        Qbar = build_single_constraint(model, w, ModelParams(p, alpha, beta))
        sol_a1 = hybrid_solve(Qbar, config).best
        sol_a2 = sic_solve(sic_model, p, sic_mode)
        c1 = coverage_profile(model, sol_a1.bits).covered_count
        c2 = coverage_profile(model, sol_a2.bits).covered_count
        out.append(ComparisonRecord(instance, seed, p, c1 - c2, c1, c2, sol_a1.objective, sol_a2.objective))
    return out


def run_comparison_experiment(
    base_model: SpatialModel,
    n_instances: int = 30,
    p_values: Sequence[int] = (45, 40, 35, 30, 25),
    seed: int = 0,
    max_offset: float = 150.0,
    alpha: float = 1.0,
    beta: float = 1.0,
    config: SolverConfig | None = None,
    sic_mode: str = "local-search",
    significance: float = 0.05,
    workers: int = 1,
) -> tuple[list[ComparisonRecord], list[ComparisonSummary]]:
    """Perturb the base instance, solve both pipelines and test ``d > 0`` per ``p``."""
    config = config or SolverConfig(max_iterations=5, max_time=1.0)
    seeds = instance_seeds(seed, n_instances)
    args = (base_model, list(p_values))
    tail = (max_offset, alpha, beta, config, sic_mode)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(
                pool.map(_run_instance, repeat(base_model), repeat(list(p_values)), range(n_instances), seeds,
                         *(repeat(t) for t in tail))
            )
    else:
        chunks = [_run_instance(*args, i, s, *tail) for i, s in enumerate(seeds)]
    records = [r for chunk in chunks for r in chunk]

    summary = []
    for p in p_values:
        d = [r.d for r in records if r.p == p]
        avg = float(np.mean(d)) if d else float("nan")
        try:
            res = wilcoxon_signed_rank(d, "greater")
            stat, pv = res.statistic, res.p_value
        except ValueError:
            stat, pv = 0.0, 1.0
        summary.append(ComparisonSummary(p, avg, stat, pv, pv < significance))
    return records, summary


def travel_time_estimate(
    n_removed_stops: int, dwell_seconds_per_stop: float, penalty_seconds_per_stop: float = 0.0
) -> float:
    """Minutes saved when each removed stop costs ``dwell + penalty`` seconds."""
    if n_removed_stops < 0 or dwell_seconds_per_stop < 0 or penalty_seconds_per_stop < 0:
        raise ValueError("inputs must be non-negative")
    return n_removed_stops * (dwell_seconds_per_stop + penalty_seconds_per_stop) / 60.0


# --- exports ----------------------------------------------------------------


def _csv(path: str | Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    _csv(path, ["p", "best", "diag_bound", "eigen_bound", "ratio"],
         [[r.p, repr(r.best), repr(r.diag_bound), repr(r.eigen_bound), repr(r.ratio)] for r in rows])


def write_comparison_csv(path: str | Path, summary: Sequence[ComparisonSummary]) -> None:
    _csv(path, ["p", "avg_d", "W", "p_value", "reject"],
         [[s.p, repr(s.avg_d), repr(s.statistic), repr(s.p_value), str(s.reject).lower()] for s in summary])


def write_records_csv(path: str | Path, records: Sequence[ComparisonRecord]) -> None:
    _csv(path, ["instance", "seed", "p", "d", "qubo_covered", "sic_covered", "qubo_objective", "sic_objective"],
         [[r.instance, r.seed, r.p, r.d, r.qubo_covered, r.sic_covered, repr(r.qubo_objective),
           repr(r.sic_objective)] for r in records])


def write_solution_csv(path: str | Path, model: SpatialModel, x) -> None:
    _csv(path, ["facility_id", "active"], [[f.id, int(b)] for f, b in zip(model.facilities, x)])


def write_coverage_csv(path: str | Path, model: SpatialModel, profile: CoverageProfile) -> None:
    _csv(path, ["demand_id", "count"], [[d.id, int(c)] for d, c in zip(model.demand_nodes, profile.counts)])


def coverage_geojson(model: SpatialModel, x) -> dict:
    """FeatureCollection of demand nodes (with counts) and facilities (with active flags)."""
    profile = coverage_profile(model, x)
    features = []
    for d, c in zip(model.demand_nodes, profile.counts):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [d.lon, d.lat]},
            "properties": {"kind": "demand", "id": d.id, "population": d.population, "count": int(c)},
        })
    for f, b in zip(model.facilities, x):
        props = {"kind": "facility", "id": f.id, "route_order": f.route_order, "active": bool(b)}
        if f.weight is not None:
            props["weight"] = f.weight
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [f.lon, f.lat]},
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}


def write_coverage_geojson(path: str | Path, model: SpatialModel, x) -> None:
    with open(path, "w") as fh:
        json.dump(coverage_geojson(model, x), fh, indent=1)
        fh.write("\n")
