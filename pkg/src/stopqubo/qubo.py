"""Competition-linearized QUBO model for facility consolidation.

Each facility ``j`` aggregates the distance-decayed demand around it,
``agg_j = w_j**alpha * sum_{k in A_j} a_k d_jk**-beta``. The exact
competition objective divides that demand among the active competitors,
``agg_j * x_j / (1 + sum_{i in F_j} x_i)``. Expanding it to first order
around the all-competitors-active point gives the quadratic model

    Q_jj = agg_j * (1 + 2 m_j) / (1 + m_j)**2
    Q_ji = -Q_jj / (1 + 2 m_j)            for i in F_j

which is stored here as a symmetric matrix with the off-diagonal pair
``(i, j)`` holding ``(Q_ij + Q_ji) / 2``; the quadratic form is unchanged.

Everything is a maximization. ``QuboMatrix.offset`` carries the constant
term so that penalized objectives equal the unpenalized one on feasible
points.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spatial import MIN_DISTANCE_M, SpatialModel


class NumericalError(RuntimeError):
    """Raised when an eigen-decomposition or similar numerical step fails."""


@dataclass(frozen=True)
class ModelParams:
    p: int
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float | None = None  # None selects 1 + max_j Q_jj

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be > 0")


@dataclass(frozen=True)
class PartitionScheme:
    """Disjoint facility index subsets, each with its own activation quota."""

    subsets: tuple[tuple[int, ...], ...]
    quotas: tuple[int, ...]

    def __post_init__(self) -> None:
        subsets = tuple(tuple(int(i) for i in s) for s in self.subsets)
        quotas = tuple(int(q) for q in self.quotas)
        object.__setattr__(self, "subsets", subsets)
        object.__setattr__(self, "quotas", quotas)
        if len(subsets) != len(quotas):
            raise ValueError("one quota per subset is required")
        flat = [i for s in subsets for i in s]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("subsets must partition 0..n-1")
        for s, q in zip(subsets, quotas):
            if not 0 <= q <= len(s):
                raise ValueError(f"quota {q} out of range for a subset of size {len(s)}")

    @classmethod
    def single(cls, n: int, p: int) -> "PartitionScheme":
        return cls((tuple(range(n)),), (p,))

    @property
    def n(self) -> int:
        return sum(len(s) for s in self.subsets)

    @property
    def p(self) -> int:
        return sum(self.quotas)

    def violation(self, x) -> int:
        x = np.asarray(x)
        return int(sum(abs(int(x[list(s)].sum()) - q) for s, q in zip(self.subsets, self.quotas)))

    def feasible_mask(self, bits: np.ndarray) -> np.ndarray:
        """Row mask of a ``(rows, n)`` 0/1 matrix selecting feasible rows."""
        ok = np.ones(bits.shape[0], dtype=bool)
        for s, q in zip(self.subsets, self.quotas):
            ok &= bits[:, list(s)].sum(axis=1) == q
        return ok


@dataclass(frozen=True, eq=False)
class QuboMatrix:
    """Symmetric coefficient matrix plus a constant offset.

    ``constraint`` records the partition the penalty encodes, if any, so
    that solvers can report feasibility of what they return.
    """

    matrix: np.ndarray
    offset: float = 0.0
    constraint: PartitionScheme | None = field(default=None)

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("QUBO matrix must be square")
        if not np.array_equal(m, m.T):
            raise ValueError("QUBO matrix must be symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", float(self.offset))
        if self.constraint is not None and self.constraint.n != m.shape[0]:
            raise ValueError("constraint dimension does not match the matrix")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix)


@dataclass(frozen=True, eq=False)
class BinarySolution:
    bits: np.ndarray
    objective: float
    feasible: bool = True
    violation: int = 0

    def __post_init__(self) -> None:
        if self.feasible != (self.violation == 0):
            raise ValueError("feasible must equal (violation == 0)")


def evaluate(Q: QuboMatrix, x, constraint: PartitionScheme | None = None) -> BinarySolution:
    """Wrap ``x`` as a :class:`BinarySolution` with objective and feasibility."""
    bits = np.asarray(x, dtype=np.int8).copy()
    bits.setflags(write=False)
    constraint = constraint if constraint is not None else Q.constraint
    violation = constraint.violation(bits) if constraint is not None else 0
    return BinarySolution(bits, objective_value(Q, bits), violation == 0, violation)


# --- coefficients -----------------------------------------------------------


def aggregated_demand(model: SpatialModel, weights, j: int, alpha: float = 1.0, beta: float = 1.0) -> float:
    """``w_j**alpha * sum_{k in A_j} a_k * d_jk**-beta`` (0 when ``A_j`` is empty)."""
    members = model.demand_neighborhood(j)
    if members.size == 0:
        return 0.0
    a = model.populations[members]
    d = np.maximum(model.distances[j, members], MIN_DISTANCE_M)
    return float(float(weights[j]) ** alpha * np.sum(a * d ** (-beta)))


def aggregated_demands(model: SpatialModel, weights, alpha: float = 1.0, beta: float = 1.0) -> np.ndarray:
    return np.array(
        [aggregated_demand(model, weights, j, alpha, beta) for j in range(model.n_facilities)]
    )


def linear_coeff(model: SpatialModel, weights, j: int, alpha: float = 1.0, beta: float = 1.0) -> float:
    m = model.max_competitors(j)
    return aggregated_demand(model, weights, j, alpha, beta) * (1 + 2 * m) / (1 + m) ** 2


def quadratic_coeff(
    model: SpatialModel, weights, j: int, i: int, alpha: float = 1.0, beta: float = 1.0
) -> float:
    """Row-``j`` competition coefficient ``Q_ji``; zero unless ``i`` competes with ``j``."""
    if i == j or i not in model.competitor_neighborhood(j):
        return 0.0
    m = model.max_competitors(j)
    return -linear_coeff(model, weights, j, alpha, beta) / (1 + 2 * m)


def competition_matrix(model: SpatialModel, weights, alpha: float = 1.0, beta: float = 1.0) -> np.ndarray:
    """The unsymmetrized matrix: ``Q_jj`` on the diagonal, ``Q_ji`` in row ``j``."""
    n = model.n_facilities
    agg = aggregated_demands(model, weights, alpha, beta)
    m = model.competitor_counts
    raw = np.zeros((n, n))
    diag = agg * (1 + 2 * m) / (1 + m) ** 2
    raw[np.arange(n), np.arange(n)] = diag
    for j, comp in enumerate(model.competitor_neighborhoods):
        if comp.size:
            raw[j, comp] = -diag[j] / (1 + 2 * m[j])
    return raw


def exact_competition_objective(model: SpatialModel, weights, x, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Sum over facilities of ``agg_j * x_j / (1 + active competitors of j)``."""
    x = np.asarray(x, dtype=float)
    agg = aggregated_demands(model, weights, alpha, beta)
    total = 0.0
    for j, comp in enumerate(model.competitor_neighborhoods):
        if x[j]:
            total += agg[j] * x[j] / (1.0 + x[comp].sum())
    return float(total)


def linearized_contribution(model: SpatialModel, weights, j: int, x, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Facility ``j``'s share of the quadratic model: ``Q_jj x_j + sum_{i in F_j} Q_ji x_i x_j``."""
    x = np.asarray(x, dtype=float)
    q_jj = linear_coeff(model, weights, j, alpha, beta)
    comp = model.competitor_neighborhood(j)
    q_ji = -q_jj / (1 + 2 * comp.size)
    return float(q_jj * x[j] + q_ji * x[j] * x[comp].sum())


# --- matrix assembly --------------------------------------------------------


def auto_gamma(Q: QuboMatrix | np.ndarray) -> float:
    """Penalty strength ``1 + max_j Q_jj`` of the unconstrained matrix."""
    diag = np.diag(Q.matrix if isinstance(Q, QuboMatrix) else Q)
    return 1.0 + float(diag.max(initial=0.0))


def build_unconstrained(model: SpatialModel, weights, params: ModelParams | None = None) -> QuboMatrix:
    alpha = params.alpha if params else 1.0
    beta = params.beta if params else 1.0
    raw = competition_matrix(model, weights, alpha, beta)
    diag = np.diag(raw).copy()
    sym = (raw + raw.T) / 2
    sym[np.arange(len(diag)), np.arange(len(diag))] = diag
    return QuboMatrix(sym, 0.0)


def _check_p(n: int, p: int) -> None:
    if not 1 <= p <= n:
        raise ValueError(f"p must lie in [1, {n}], got {p}")


def penalize(Q: QuboMatrix, partition: PartitionScheme, gamma: float | None = None) -> QuboMatrix:
    """Subtract ``gamma * sum_k (sum_{j in S_k} x_j - p_k)**2`` from ``Q``."""
    if partition.n != Q.n:
        raise ValueError("partition dimension does not match the matrix")
    gamma = auto_gamma(Q) if gamma is None else float(gamma)
    m = np.array(Q.matrix)
    offset = Q.offset
    for subset, quota in zip(partition.subsets, partition.quotas):
        idx = np.array(subset, dtype=int)
        m[np.ix_(idx, idx)] -= gamma
        m[idx, idx] += 2 * gamma * quota
        offset -= gamma * quota**2
    return QuboMatrix(m, offset, partition)


def build_single_constraint(model: SpatialModel, weights, params: ModelParams) -> QuboMatrix:
    """Unconstrained model minus ``gamma * (sum x - p)**2``, constant included."""
    _check_p(model.n_facilities, params.p)
    Q = build_unconstrained(model, weights, params)
    return penalize(Q, PartitionScheme.single(Q.n, params.p), params.gamma)


def build_partitioned(
    model: SpatialModel, weights, params: ModelParams, partition: PartitionScheme
) -> QuboMatrix:
    """Unconstrained model minus one quadratic penalty per partition subset."""
    if partition.p != params.p:
        raise ValueError(f"partition quotas sum to {partition.p}, params.p is {params.p}")
    Q = build_unconstrained(model, weights, params)
    return penalize(Q, partition, params.gamma)


def make_route_partition(n: int, batch_size: int, quota: int) -> PartitionScheme:
    """Contiguous route batches of ``batch_size``; each keeps ``min(|S_k|, quota)`` active."""
    if not 1 <= quota <= batch_size <= n:
        raise ValueError("need 1 <= quota <= batch_size <= n")
    subsets = [tuple(range(s, min(s + batch_size, n))) for s in range(0, n, batch_size)]
    return PartitionScheme(tuple(subsets), tuple(min(len(s), quota) for s in subsets))


def partition_for_p(n: int, p: int, batch_size: int) -> PartitionScheme:
    """Contiguous batches whose quotas share ``p`` in proportion to batch size.

    Quotas are the floors of ``p * |S_k| / n`` topped up by largest
    remainder (ties to earlier batches), so they sum to ``p`` exactly.
    """
    _check_p(n, p)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    subsets = [tuple(range(s, min(s + batch_size, n))) for s in range(0, n, batch_size)]
    sizes = np.array([len(s) for s in subsets])
    share = p * sizes / n
    quotas = np.floor(share).astype(int)
    order = sorted(range(len(subsets)), key=lambda k: (-(share[k] - quotas[k]), k))
    left = p - int(quotas.sum())
    for k in order:
        if left == 0:
            break
        if quotas[k] < sizes[k]:
            quotas[k] += 1
            left -= 1
    return PartitionScheme(tuple(subsets), tuple(int(q) for q in quotas))


# --- evaluation -------------------------------------------------------------


def objective_value(Q: QuboMatrix, x) -> float:
    """``x' Q x + offset``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (Q.n,):
        raise ValueError(f"expected a vector of length {Q.n}, got shape {x.shape}")
    return float(x @ Q.matrix @ x + Q.offset)


def flip_gains(Q: QuboMatrix, x) -> np.ndarray:
    """Objective change from flipping each bit of ``x``, all at once."""
    x = np.asarray(x, dtype=float)
    diag = np.diag(Q.matrix)
    field_ = Q.matrix @ x - diag * x
    return (1 - 2 * x) * (diag + 2 * field_)


def flip_gain(Q: QuboMatrix, x, j: int) -> float:
    x = np.asarray(x, dtype=float)
    row = Q.matrix[j]
    off = float(row @ x - row[j] * x[j])
    return float((1 - 2 * x[j]) * (row[j] + 2 * off))


# --- bounds and spectra -----------------------------------------------------


def _as_array(Q) -> np.ndarray:
    return Q.matrix if isinstance(Q, QuboMatrix) else np.asarray(Q, dtype=float)


def upper_bound_diagonal(Q, p: int) -> float:
    """Sum of the ``p`` largest diagonal entries of the unconstrained matrix."""
    diag = np.diag(_as_array(Q))
    if not 0 <= p <= diag.size:
        raise ValueError(f"p must lie in [0, {diag.size}], got {p}")
    return float(np.sort(diag)[::-1][:p].sum())


def eigenvalues(Q) -> np.ndarray:
    m = _as_array(Q)
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix has non-finite entries")
    try:
        return np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-decomposition failed: {exc}") from exc


def upper_bound_eigen(Q, p: int) -> float:
    """Sum of the ``p`` largest eigenvalues of the unconstrained matrix."""
    lam = eigenvalues(Q)
    if not 0 <= p <= lam.size:
        raise ValueError(f"p must lie in [0, {lam.size}], got {p}")
    return float(lam[::-1][:p].sum())


@dataclass(frozen=True)
class DefinitenessReport:
    eigenvalues: np.ndarray
    min_eigenvalue: float
    max_eigenvalue: float
    positive_definite: bool


def definiteness_report(Q, rel_tol: float = 1e-8) -> DefinitenessReport:
    """Spectrum summary; PD means ``lambda_min > rel_tol * spectral radius``."""
    lam = eigenvalues(Q)
    radius = float(np.abs(lam).max(initial=0.0))
    lo = float(lam[0]) if lam.size else 0.0
    hi = float(lam[-1]) if lam.size else 0.0
    return DefinitenessReport(lam, lo, hi, lam.size > 0 and lo > rel_tol * radius)


def pd_shift(Q: QuboMatrix, epsilon: float) -> QuboMatrix:
    """Shift the diagonal so the smallest eigenvalue becomes ``epsilon``.

    Returns ``Q`` itself when it is already positive definite. Because
    ``x_i**2 == x_i`` the shift adds ``(epsilon - lambda_min) * sum(x)`` to
    every objective, a constant on any fixed-cardinality feasible set.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    lam_min = float(eigenvalues(Q)[0])
    if lam_min > 0:
        return Q
    m = np.array(Q.matrix)
    m[np.arange(Q.n), np.arange(Q.n)] += epsilon - lam_min
    return QuboMatrix(m, Q.offset, Q.constraint)


# --- serialization ----------------------------------------------------------


def dumps(Q: QuboMatrix) -> str:
    """Text form: ``n,offset`` header then ``i,j,value`` for nonzero upper-triangle entries."""
    buf = io.StringIO()
    buf.write(f"{Q.n},{Q.offset!r}\n")
    rows, cols = np.nonzero(np.triu(Q.matrix))
    for i, j in zip(rows, cols):
        buf.write(f"{i},{j},{float(Q.matrix[i, j])!r}\n")
    return buf.getvalue()


def loads(text: str) -> QuboMatrix:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty QUBO text")
    head = lines[0].split(",")
    if len(head) != 2:
        raise ValueError("QUBO header must be 'n,offset'")
    n, offset = int(head[0]), float(head[1])
    m = np.zeros((n, n))
    for ln in lines[1:]:
        i, j, v = ln.split(",")
        i, j = int(i), int(j)
        if not 0 <= i <= j < n:
            raise ValueError(f"bad entry index ({i}, {j})")
        m[i, j] = m[j, i] = float(v)
    return QuboMatrix(m, offset)


def write_qubo(Q: QuboMatrix, path: str | Path) -> None:
    Path(path).write_text(dumps(Q))


def read_qubo(path: str | Path) -> QuboMatrix:
    return loads(Path(path).read_text())

