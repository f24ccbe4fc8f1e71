"""End-to-end acceptance checks, one test per criterion.

Case-study criteria run on the bundled synthetic corridor (49 stops, 135
demand areas), weighted by TOPSIS over demand, connectedness and landmarks.
"""
import itertools
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from instances import partitioned_qubo, route_model
from stopqubo import cli
from stopqubo.analysis import coverage_profile, run_comparison_experiment, wilcoxon_signed_rank
from stopqubo.datasets import CORRIDOR_CRITERIA, CORRIDOR_PRIORITIES, corridor_paths, load_corridor, make_corridor
from stopqubo.qubo import (
    ModelParams,
    aggregated_demand,
    build_partitioned,
    build_single_constraint,
    build_unconstrained,
    definiteness_report,
    linearized_contribution,
    objective_value,
    partition_for_p,
    upper_bound_diagonal,
    upper_bound_eigen,
)
from stopqubo.solvers import ExhaustiveBackend, SolverConfig, brute_force, hybrid_solve
from stopqubo.topsis import CriteriaSpec, alternatives_matrix, topsis_closeness, topsis_rank

CASE_CONFIG = SolverConfig(max_iterations=20, max_time=120.0, seed=0)


def _suite1():
    rng = np.random.default_rng(2024)
    return [route_model(int(rng.integers(2, 21)), int(rng.integers(5, 60)), 10_000 + s) for s in range(100)]


@pytest.fixture(scope="module")
def suite2():
    """50 partitioned n=14 instances, each with its brute-force optimum and hybrid report."""
    out = []
    t0 = time.perf_counter()
    for s in range(50):
        model, Q = partitioned_qubo(14, 20_000 + s)
        report = hybrid_solve(Q, SolverConfig(max_iterations=10, max_time=5.0, seed=s), ExhaustiveBackend())
        out.append((model, Q, brute_force(Q), report))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def case():
    model = load_corridor()
    spec = CriteriaSpec(CORRIDOR_CRITERIA, CORRIDOR_PRIORITIES)
    w = topsis_rank(alternatives_matrix(model.facilities, spec.names), spec)
    Q = build_unconstrained(model, w)
    runs = {}
    t0 = time.perf_counter()
    for p in (45, 40, 14):
        Qhat = build_partitioned(model, w, ModelParams(p), partition_for_p(model.n_facilities, p, 5))
        runs[p] = hybrid_solve(Qhat, CASE_CONFIG)
    return model, w, Q, runs, time.perf_counter() - t0


def test_01_linearization_exactness(verdict):
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for model in _suite1():
        w = model.weights()
        for j in range(model.n_facilities):
            x = np.zeros(model.n_facilities)
            x[j] = 1
            x[model.competitor_neighborhood(j)] = 1
            exact = aggregated_demand(model, w, j) / (1 + model.max_competitors(j))
            got = linearized_contribution(model, w, j, x)
            rel = abs(got - exact) / max(abs(exact), 1e-300)
            worst = max(worst, rel if exact else abs(got))
            checked += 1
    elapsed = time.perf_counter() - t0
    verdict("1 linearization exactness", worst <= 1e-9 and elapsed < 1.0,
            f"{checked} facilities over 100 instances, worst rel err {worst:.1e}, {elapsed:.2f}s")


def test_02_oracle_equivalence(suite2, verdict):
    runs, elapsed = suite2
    exact = within = never_better = 0
    for _, _, oracle, report in runs:
        diff = oracle.objective - report.best.objective
        scale = max(1.0, abs(oracle.objective))
        exact += abs(diff) <= 1e-9 * scale
        within += diff <= 0.01 * abs(oracle.objective) + 1e-9
        never_better += diff >= -1e-9 * scale
    ok = exact >= 48 and within == 50 and never_better == 50 and elapsed < 60
    verdict("2 oracle equivalence", ok, f"exact {exact}/50, within 1% {within}/50, {elapsed:.1f}s")


def test_03_bound_chain(suite2, case, verdict):
    violations, checked = 0, 0
    rng = np.random.default_rng(7)
    for model in _suite1():
        n = model.n_facilities
        p = int(rng.integers(1, n + 1))
        w = model.weights()
        Q = build_unconstrained(model, w)
        report = hybrid_solve(build_single_constraint(model, w, ModelParams(p)), SolverConfig(max_iterations=3))
        best = objective_value(Q, report.best.bits)
        d, e = upper_bound_diagonal(Q, p), upper_bound_eigen(Q, p)
        violations += not (report.best.feasible and best <= d + 1e-9 * abs(d) and d <= e + 1e-9 * abs(e))
        checked += 1
    for model, Qhat, _, report in suite2[0]:
        Q = build_unconstrained(model, model.weights())
        p = Qhat.constraint.p
        best = objective_value(Q, report.best.bits)
        d, e = upper_bound_diagonal(Q, p), upper_bound_eigen(Q, p)
        violations += not (best <= d + 1e-9 * abs(d) and d <= e + 1e-9 * abs(e))
        checked += 1
    _, _, Q, runs, _ = case
    for p, report in runs.items():
        best = objective_value(Q, report.best.bits)
        d, e = upper_bound_diagonal(Q, p), upper_bound_eigen(Q, p)
        violations += not (report.best.feasible and best <= d <= e + 1e-9 * abs(e))
        checked += 1
    verdict("3 bound chain", violations == 0, f"{violations} violations over {checked} instances")


def test_04_case_study_ratio(case, verdict):
    _, _, Q, runs, elapsed = case
    best = objective_value(Q, runs[45].best.bits)
    eig = upper_bound_eigen(Q, 45)
    ratio = best / eig
    verdict("4 case-study ratio", ratio >= 0.90 and runs[45].best.feasible and elapsed < 300,
            f"p=45 best {best:.2f} / eigen bound {eig:.2f} = {ratio:.4f}, {elapsed:.1f}s")


def test_05_feasibility_under_auto_gamma(suite2, case, verdict):
    bad = [i for i, (_, _, _, r) in enumerate(suite2[0]) if r.best.violation]
    bad += [f"case p={p}" for p, r in case[3].items() if r.best.violation]
    total = len(suite2[0]) + len(case[3])
    verdict("5 feasibility under auto gamma", not bad, f"{total - len(bad)}/{total} returned solutions feasible")


def test_06_coverage_preservation(case, verdict):
    model, _, _, runs, _ = case
    full = coverage_profile(model, np.ones(model.n_facilities, int)).covered_count
    c40 = coverage_profile(model, runs[40].best.bits).covered_count
    c14 = coverage_profile(model, runs[14].best.bits).covered_count
    verdict("6 coverage preservation", c40 == full and c14 < full,
            f"all-active {full}, p=40 {c40}, p=14 {c14}")


def test_07_vertex_dominance(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    found, violations, seed = 0, 0, 0
    while found < 20:
        n = 8 + seed % 5
        model = route_model(n, 3 * n, 30_000 + seed)
        seed += 1
        p = int(np.ceil(0.8 * n))
        Qhat = build_partitioned(model, model.weights(), ModelParams(p), partition_for_p(n, p, 4))
        if not definiteness_report(Qhat).positive_definite:
            continue
        found += 1
        vertex = brute_force(Qhat).objective
        y = rng.uniform(1e-9, 1.0, size=(1000, n))
        vals = np.einsum("ki,ij,kj->k", y, Qhat.matrix, y) + Qhat.offset
        violations += int((vals > vertex + 1e-9 * abs(vertex)).sum())
    elapsed = time.perf_counter() - t0
    verdict("7 vertex dominance", violations == 0 and elapsed < 30,
            f"{violations} of 20000 interior points above the best vertex ({seed} instances drawn), {elapsed:.2f}s")


GOLDEN_TOPSIS = (0.2344004447345443, 0.7128726904321523, 0.8892339254969862)


def test_08_topsis_golden(verdict):
    m = np.array([[5064, 1, 7], [4383, 3, 6], [4735, 3, 8]], dtype=float)
    c = topsis_closeness(m, CriteriaSpec(("demand", "connectedness", "landmarks"), (0.45, 0.3, 0.25)))
    err = float(np.abs(c - GOLDEN_TOPSIS).max())
    verdict("8 TOPSIS golden case", int(np.argmax(c)) == 2 and err <= 1e-9,
            f"closeness A={c[0]:.6f} B={c[1]:.6f} C={c[2]:.6f}, max err {err:.1e}")


def test_09_wilcoxon_exactness(verdict):
    mismatches = patterns = 0
    for n in (3, 4, 5):
        for mags in ([1, 2, 3, 4, 5][:n], [1, 1, 2, 3, 3][:n], [1, 1, 1, 1, 1][:n]):
            ranks = []
            ordered = sorted(mags)
            for m in mags:
                pos = [i + 1 for i, v in enumerate(ordered) if v == m]
                ranks.append(Fraction(sum(pos), len(pos)))
            for signs in itertools.product((0, 1), repeat=n):
                w = sum(r for r, s in zip(ranks, signs) if s)
                hits = sum(sum(r for r, t in zip(ranks, other) if t) >= w
                           for other in itertools.product((0, 1), repeat=n))
                d = [m if s else -m for m, s in zip(mags, signs)]
                res = wilcoxon_signed_rank(d, "greater")
                mismatches += res.p_value != float(Fraction(hits, 2**n)) or res.statistic != float(w)
                patterns += 1
    all_pos = [wilcoxon_signed_rank(list(range(1, n + 1))).p_value == 2.0**-n for n in (3, 4, 5)]
    verdict("9 Wilcoxon exactness", mismatches == 0 and all(all_pos),
            f"{patterns - mismatches}/{patterns} sign patterns match enumeration")


def test_10_comparison_direction(verdict):
    t0 = time.perf_counter()
    _, summary = run_comparison_experiment(
        make_corridor(n_facilities=50),
        n_instances=30,
        p_values=(45, 40, 35, 30, 25),
        seed=0,
        max_offset=150.0,
        config=SolverConfig(max_iterations=5, max_time=1.0),
    )
    elapsed = time.perf_counter() - t0
    by_p = {s.p: s for s in summary}
    ok = all(by_p[p].avg_d >= 0 for p in (40, 35, 30, 25)) and by_p[30].reject and by_p[25].reject
    table = ", ".join(f"p={s.p} d={s.avg_d:.2f} pv={s.p_value:.2g}{'*' if s.reject else ''}" for s in summary)
    verdict("10 comparison direction", ok, f"{table} ({elapsed:.0f}s)")


def test_11_determinism(tmp_path, verdict):
    demand, facilities = corridor_paths()
    cfg = tmp_path / "solve.json"
    cfg.write_text(json.dumps({
        "demand": str(demand),
        "facilities": str(facilities),
        "p": 40,
        "batch_size": 5,
        "quota": 4,
        "criteria": {"names": list(CORRIDOR_CRITERIA), "weights": list(CORRIDOR_PRIORITIES)},
        "solver": {"backend": "exhaustive", "max_iterations": 10},
        "seed": 5,
        "out": str(tmp_path / "runs"),
    }))
    snapshots = []
    for _ in range(2):
        assert cli.main(["solve", "--config", str(cfg)]) == 0
        (out,) = (tmp_path / "runs").glob("solve-*")
        snapshots.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        for p in out.iterdir():
            p.unlink()
    same = snapshots[0] == snapshots[1]
    verdict("11 determinism", same and len(snapshots[0]) >= 5,
            f"{len(snapshots[0])} output files, byte-identical: {same}")
