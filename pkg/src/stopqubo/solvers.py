"""Solvers for maximizing ``x' Q x + offset`` over binary ``x``.

``hybrid_solve`` runs simulated annealing and tabu search on the whole
problem each iteration, then hands blocks of high-impact variables to a
pluggable :class:`AnnealerBackend` with the rest of the vector clamped.
``brute_force`` is the exact oracle for small instances.
"""
from __future__ import annotations

import logging
import math
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .qubo import (
    BinarySolution,
    PartitionScheme,
    QuboMatrix,
    dumps,
    evaluate,
    flip_gains,
    objective_value,
)

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_N = 24
_CHUNK_BITS = 16


@dataclass(frozen=True)
class SAConfig:
    """Geometric annealing schedule. ``None`` temperatures are derived from the start point."""

    t_initial: float | None = None
    t_final: float | None = None
    cooling_rate: float | None = None
    num_temperatures: int = 100
    sweeps_per_temperature: int = 1


@dataclass(frozen=True)
class TabuConfig:
    """``None`` fields scale with the problem size ``n``."""

    tenure: int | None = None
    max_steps: int | None = None
    max_non_improving: int | None = None


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 10
    max_time: float = 10.0
    subproblem_size: int | None = None
    sa: SAConfig = field(default_factory=SAConfig)
    tabu: TabuConfig = field(default_factory=TabuConfig)
    seed: int = 0
    parallel: bool = False

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.max_time <= 0:
            raise ValueError("max_time must be > 0")
        if self.subproblem_size is not None and self.subproblem_size < 1:
            raise ValueError("subproblem_size must be >= 1")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    branch: str
    objective: float


@dataclass
class SolverReport:
    best: BinarySolution
    trace: list[TraceEntry]
    wall_time: float
    iterations: int

    def incumbent_history(self) -> list[float]:
        return [t.objective for t in self.trace if t.branch == "incumbent"]


# --- enumeration ------------------------------------------------------------


def bit_chunks(n: int) -> Iterator[np.ndarray]:
    """All 2**n vectors as 0/1 rows, in lexicographic order (index 0 most significant)."""
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    total = 1 << n
    step = 1 << min(n, _CHUNK_BITS)
    for lo in range(0, total, step):
        ints = np.arange(lo, min(lo + step, total), dtype=np.int64)
        yield ((ints[:, None] >> shifts) & 1).astype(np.int8)


def _as_partition(n: int, constraint) -> PartitionScheme | None:
    if constraint is None or isinstance(constraint, PartitionScheme):
        return constraint
    return PartitionScheme.single(n, int(constraint))


def brute_force(Q: QuboMatrix, constraint: PartitionScheme | int | None = None) -> BinarySolution:
    """Exact maximizer over all binary vectors meeting ``constraint``.

    ``constraint`` is a partition, a cardinality ``p``, or ``None`` for the
    unconstrained problem. Ties go to the lexicographically smallest vector.
    """
    n = Q.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force refuses n={n} (limit {BRUTE_FORCE_MAX_N})")
    partition = _as_partition(n, constraint)
    if n == 0:
        return evaluate(Q, np.zeros(0), partition)
    M = Q.matrix
    best_val = -math.inf
    best_bits = None
    for bits in bit_chunks(n):
        if partition is not None:
            bits = bits[partition.feasible_mask(bits)]
            if bits.shape[0] == 0:
                continue
        vals = ((bits @ M) * bits).sum(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val = float(vals[i])
            best_bits = bits[i]
    if best_bits is None:
        raise ValueError("constraint admits no binary vector")
    return evaluate(Q, best_bits, partition if partition is not None else Q.constraint)


# --- single-flip heuristics ------------------------------------------------


def _temperatures(cfg: SAConfig, t0: float, t_final: float) -> np.ndarray:
    k = np.arange(cfg.num_temperatures)
    if cfg.cooling_rate is not None:
        return t0 * cfg.cooling_rate**k
    if cfg.num_temperatures == 1:
        return np.array([t0])
    return t0 * (t_final / t0) ** (k / (cfg.num_temperatures - 1))


def simulated_annealing(
    Q: QuboMatrix,
    start,
    config: SAConfig | None = None,
    seed: int | np.random.SeedSequence | None = None,
) -> BinarySolution:
    """Single-flip Metropolis annealing; returns the best vector visited."""
    cfg = config or SAConfig()
    n = Q.n
    x = np.asarray(start, dtype=float).copy()
    if x.shape != (n,):
        raise ValueError(f"start must have length {n}")
    if n == 0:
        return evaluate(Q, x)
    rng = np.random.default_rng(seed)
    M = Q.matrix
    diag = np.diag(M).copy()
    field_ = M @ x - diag * x

    t0 = cfg.t_initial
    if t0 is None:
        t0 = float(np.abs(flip_gains(Q, x)).max())
        if t0 <= 0:
            t0 = 1.0
    t_final = cfg.t_final if cfg.t_final is not None else 1e-3 * t0

    current = objective_value(Q, x)
    best_x = x.copy()
    best_val = current
    for temp in _temperatures(cfg, t0, t_final):
        for _ in range(cfg.sweeps_per_temperature):
            order = rng.permutation(n)
            draws = rng.random(n)
            for j, u in zip(order.tolist(), draws.tolist()):
                sign = 1.0 - 2.0 * x[j]
                gain = sign * (diag[j] + 2.0 * field_[j])
                if gain >= 0.0 or u < math.exp(gain / temp):
                    x[j] += sign
                    field_ += sign * M[j]
                    field_[j] -= sign * diag[j]
                    current += gain
                    if current > best_val:
                        best_val = current
                        best_x[:] = x
    return evaluate(Q, best_x)


def tabu_search(Q: QuboMatrix, start, config: TabuConfig | None = None) -> BinarySolution:
    """Best-admissible single-flip tabu search with aspiration on the incumbent."""
    cfg = config or TabuConfig()
    n = Q.n
    x = np.asarray(start, dtype=float).copy()
    if x.shape != (n,):
        raise ValueError(f"start must have length {n}")
    if n == 0:
        return evaluate(Q, x)
    tenure = cfg.tenure if cfg.tenure is not None else max(1, min(20, n // 4))
    max_steps = cfg.max_steps if cfg.max_steps is not None else 50 * n
    patience = cfg.max_non_improving if cfg.max_non_improving is not None else 10 * n

    M = Q.matrix
    diag = np.diag(M).copy()
    field_ = M @ x - diag * x
    current = objective_value(Q, x)
    best_x = x.copy()
    best_val = current
    tabu_until = np.zeros(n, dtype=int)
    stale = 0
    for step in range(max_steps):
        gains = (1.0 - 2.0 * x) * (diag + 2.0 * field_)
        admissible = (tabu_until <= step) | (current + gains > best_val)
        if not admissible.any():
            break
        j = int(np.argmax(np.where(admissible, gains, -np.inf)))
        sign = 1.0 - 2.0 * x[j]
        x[j] += sign
        field_ += sign * M[j]
        field_[j] -= sign * diag[j]
        current += gains[j]
        tabu_until[j] = step + 1 + tenure
        if current > best_val:
            best_val = current
            best_x[:] = x
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return evaluate(Q, best_x)


# --- decomposition ----------------------------------------------------------


def impact_order(Q: QuboMatrix, x) -> np.ndarray:
    """Indices sorted by decreasing ``|flip gain|``, ties to the lower index."""
    g = np.abs(flip_gains(Q, x))
    return np.lexsort((np.arange(Q.n), -g))


def select_high_impact(Q: QuboMatrix, x, m: int) -> np.ndarray:
    if not 0 <= m <= Q.n:
        raise ValueError(f"m must lie in [0, {Q.n}]")
    return np.sort(impact_order(Q, x)[:m])


@dataclass(frozen=True, eq=False)
class Subproblem:
    """A QUBO over the free indices with every other bit clamped to ``clamped``."""

    qubo: QuboMatrix
    free: np.ndarray
    clamped: np.ndarray

    def expand(self, y) -> np.ndarray:
        x = self.clamped.copy()
        x[self.free] = np.asarray(y, dtype=x.dtype)
        return x


def extract_subproblem(Q: QuboMatrix, x, free) -> Subproblem:
    """Clamp the complement of ``free`` to ``x`` and fold it into the free block."""
    x = np.asarray(x, dtype=np.int8).copy()
    free = np.asarray(sorted(int(i) for i in free), dtype=int)
    fixed = np.setdiff1d(np.arange(Q.n), free)
    M = Q.matrix
    xc = x[fixed].astype(float)
    sub = np.array(M[np.ix_(free, free)])
    linear = 2.0 * (M[np.ix_(free, fixed)] @ xc)
    sub[np.arange(free.size), np.arange(free.size)] += linear
    offset = Q.offset + float(xc @ M[np.ix_(fixed, fixed)] @ xc)
    return Subproblem(QuboMatrix(sub, offset), free, x)


# --- backends ---------------------------------------------------------------


class AnnealerBackend(ABC):
    """Solves sub-QUBOs produced by the decomposition branch."""

    name = "backend"

    @abstractmethod
    def solve(self, sub: QuboMatrix, time_budget_ms: float) -> np.ndarray:
        """Return a 0/1 assignment of length ``sub.n`` (maximization)."""


class ExhaustiveBackend(AnnealerBackend):
    name = "exhaustive"

    def __init__(self, max_size: int = 20):
        self.max_size = max_size

    def solve(self, sub: QuboMatrix, time_budget_ms: float) -> np.ndarray:
        if sub.n > self.max_size:
            raise ValueError(f"exhaustive backend refuses {sub.n} variables (limit {self.max_size})")
        return np.array(brute_force(sub).bits)


class SABackend(AnnealerBackend):
    name = "sa"

    def __init__(self, config: SAConfig | None = None, seed: int = 0):
        self.config = config or SAConfig(num_temperatures=200, sweeps_per_temperature=2)
        self._rng = np.random.default_rng(seed)

    def solve(self, sub: QuboMatrix, time_budget_ms: float) -> np.ndarray:
        start = np.zeros(sub.n)
        seed = int(self._rng.integers(2**63))
        return np.array(simulated_annealing(sub, start, self.config, seed).bits)


class TextBackend(AnnealerBackend):
    """Adapter for solvers speaking the text wire format.

    ``func`` receives the serialized sub-QUBO and a time budget in whole
    milliseconds and returns a bit string such as ``"0110"``.
    """

    name = "text"

    def __init__(self, func: Callable[[str, int], str]):
        self.func = func

    def solve(self, sub: QuboMatrix, time_budget_ms: float) -> np.ndarray:
        reply = self.func(dumps(sub), max(1, int(time_budget_ms))).strip()
        if len(reply) != sub.n or set(reply) - {"0", "1"}:
            raise ValueError(f"backend returned {reply!r} for a {sub.n}-variable sub-problem")
        return np.array([int(c) for c in reply], dtype=np.int8)


def default_backends(seed: int = 0) -> dict[str, AnnealerBackend]:
    return {"exhaustive": ExhaustiveBackend(), "sa": SABackend(seed=seed)}


# --- hybrid loop ------------------------------------------------------------


def initial_incumbent(Q: QuboMatrix) -> np.ndarray:
    """Within each partition subset activate the ``p_k`` entries of largest diagonal."""
    x = np.zeros(Q.n, dtype=np.int8)
    if Q.constraint is None:
        return x
    diag = Q.diagonal
    for subset, quota in zip(Q.constraint.subsets, Q.constraint.quotas):
        idx = np.array(subset, dtype=int)
        order = idx[np.lexsort((idx, -diag[idx]))]
        x[order[:quota]] = 1
    return x


def hybrid_solve(
    Q: QuboMatrix,
    config: SolverConfig | None = None,
    backend: AnnealerBackend | None = None,
) -> SolverReport:
    """Iterate SA, tabu and the sub-problem backend, keeping the best vector found."""
    cfg = config or SolverConfig()
    n = Q.n
    m = min(n, cfg.subproblem_size if cfg.subproblem_size is not None else 10)
    if backend is None:
        backend = ExhaustiveBackend() if m <= 20 else SABackend(seed=cfg.seed)
    t_start = time.perf_counter()

    x = initial_incumbent(Q)
    current = evaluate(Q, x)
    trace = [TraceEntry(0, "init", current.objective)]
    sa_cfg = cfg.sa
    if n and sa_cfg.t_initial is None:
        t0 = float(np.abs(flip_gains(Q, x)).max()) or 1.0
        sa_cfg = replace(sa_cfg, t_initial=t0)
    if n and sa_cfg.t_final is None:
        sa_cfg = replace(sa_cfg, t_final=1e-3 * sa_cfg.t_initial)

    pool = ThreadPoolExecutor(max_workers=2) if cfg.parallel else None
    k = 0
    try:
        while k < cfg.max_iterations and time.perf_counter() - t_start < cfg.max_time:
            k += 1
            start = np.array(current.bits)
            sa_seed = np.random.SeedSequence([cfg.seed, k])
            if pool is not None:
                fut_sa = pool.submit(simulated_annealing, Q, start, sa_cfg, sa_seed)
                fut_tb = pool.submit(tabu_search, Q, start, cfg.tabu)
                x_sa, x_tb = fut_sa.result(), fut_tb.result()
            else:
                x_sa = simulated_annealing(Q, start, sa_cfg, sa_seed)
                x_tb = tabu_search(Q, start, cfg.tabu)
            trace.append(TraceEntry(k, "sa", x_sa.objective))
            trace.append(TraceEntry(k, "tabu", x_tb.objective))
            chosen = x_sa if x_sa.objective >= x_tb.objective else x_tb

            x_qa = _backend_branch(Q, chosen, m, backend, cfg, t_start, k, trace)
            nxt = x_qa if x_qa is not None and x_qa.objective > chosen.objective else chosen
            if nxt.objective > current.objective:
                current = nxt
            trace.append(TraceEntry(k, "incumbent", current.objective))
    finally:
        if pool is not None:
            pool.shutdown()

    return SolverReport(current, trace, time.perf_counter() - t_start, k)


def _backend_branch(Q, chosen, m, backend, cfg, t_start, k, trace) -> BinarySolution | None:
    n = Q.n
    if n == 0 or m == 0:
        return None
    order = impact_order(Q, chosen.bits)
    blocks = [order[i : i + m] for i in range(0, n, m)][: math.ceil(n / m)]
    best_bits = np.array(chosen.bits)
    best_val = chosen.objective
    for block in blocks:
        sub = extract_subproblem(Q, best_bits, block)
        budget_ms = max(1.0, (cfg.max_time - (time.perf_counter() - t_start)) * 1000.0)
        try:
            y = np.asarray(backend.solve(sub.qubo, budget_ms))
            if y.shape != (sub.qubo.n,) or not np.isin(y, (0, 1)).all():
                raise ValueError(f"backend returned an assignment of shape {y.shape}")
        except Exception as exc:  # noqa: BLE001 - any backend fault skips the branch
            log.warning("backend %s failed at iteration %d: %s", backend.name, k, exc)
            trace.append(TraceEntry(k, f"{backend.name}:failed", float("nan")))
            return None
        cand = sub.expand(y)
        val = objective_value(Q, cand)
        if val > best_val:
            best_bits, best_val = cand, val
    sol = evaluate(Q, best_bits)
    trace.append(TraceEntry(k, backend.name, sol.objective))
    return sol
