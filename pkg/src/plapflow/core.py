"""Shared domain types for the nonlocal p-Laplacian flow.

Every type validates itself on construction and is immutable afterwards.
Array-valued fields are stored as read-only float64 copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse


class PlapFlowError(Exception):
    """Base class for all library errors."""


class InvariantViolation(PlapFlowError, ValueError):
    """A type was constructed with arguments that break its invariants."""


class PartitionMismatch(PlapFlowError, ValueError):
    pass


class NonFinite(PlapFlowError, ValueError):
    pass


class OutOfDomain(PlapFlowError, ValueError):
    pass


class DegenerateKernel(PlapFlowError, ValueError):
    pass


class NoConvergence(PlapFlowError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, iterations: int, final_residual: float, step: Optional[int] = None):
        self.iterations = iterations
        self.final_residual = final_residual
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(
            f"no convergence{where} after {iterations} iterations "
            f"(residual {final_residual:.3e})"
        )


class InfeasibleSchedule(PlapFlowError, ValueError):
    pass


class ScaleViolation(PlapFlowError, ValueError):
    pass


class OutOfRange(PlapFlowError, ValueError):
    pass


class MarginViolation(PlapFlowError, ValueError):
    pass


class TooLarge(PlapFlowError, ValueError):
    pass


class DegenerateFit(PlapFlowError, ValueError):
    pass


class UnknownTest(PlapFlowError, ValueError):
    pass


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Partition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Uniform partition of the unit cube (0,1)^d into n^d hypercubes.

    Cells are numbered in row-major (C) order of their multi-index, the last
    axis varying fastest.
    """

    d: int
    n: int

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise InvariantViolation(f"dimension must be a positive integer, got {self.d!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvariantViolation(f"cells per axis must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n", int(self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_count(self) -> int:
        return self.n**self.d

    @property
    def cell_measure(self) -> float:
        return float(self.n) ** (-self.d)

    @property
    def cell_width(self) -> float:
        return 1.0 / self.n

    def unflatten(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.cell_count:
            raise IndexError(f"cell index {i} out of range")
        return tuple(int(k) for k in np.unravel_index(i, self.shape))

    def flatten(self, multi: Sequence[int]) -> int:
        if len(multi) != self.d:
            raise IndexError(f"expected {self.d} indices, got {len(multi)}")
        return int(np.ravel_multi_index(tuple(int(k) for k in multi), self.shape))

    def cell_center(self, i: int) -> np.ndarray:
        return (np.asarray(self.unflatten(i), dtype=np.float64) + 0.5) / self.n

    def centers(self) -> np.ndarray:
        """All cell centers, shape (cell_count, d)."""
        axes = (np.arange(self.n, dtype=np.float64) + 0.5) / self.n
        grids = np.meshgrid(*([axes] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def multi_indices(self) -> np.ndarray:
        """Integer multi-indices of all cells, shape (cell_count, d)."""
        return np.stack(np.unravel_index(np.arange(self.cell_count), self.shape), axis=1)


# ---------------------------------------------------------------------------
# CellFunction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellFunction:
    """A real vector indexed by the cells of a partition."""

    partition: Partition
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen_array(self.values).ravel()
        if vals.shape[0] != self.partition.cell_count:
            raise InvariantViolation(
                f"expected {self.partition.cell_count} values, got {vals.shape[0]}"
            )
        if not np.all(np.isfinite(vals)):
            raise NonFinite("cell function contains NaN or Inf")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, partition: Partition) -> "CellFunction":
        return cls(partition, np.zeros(partition.cell_count))

    @classmethod
    def constant(cls, partition: Partition, c: float) -> "CellFunction":
        return cls(partition, np.full(partition.cell_count, float(c)))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CellFunction):
            return NotImplemented
        return self.partition == other.partition and np.array_equal(self.values, other.values)

    __hash__ = None

    def check_partition(self, other: Partition) -> None:
        if self.partition != other:
            raise PartitionMismatch(f"{self.partition} != {other}")

    def norm(self, r: float = 2.0) -> float:
        """L^r norm of the piecewise-constant injection (measure-weighted)."""
        return weighted_norm(self.values, self.partition.cell_measure, r)

    def inner(self, other: "CellFunction") -> float:
        other.check_partition(self.partition)
        return float(self.partition.cell_measure * np.dot(self.values, other.values))


def weighted_norm(values: np.ndarray, cell_measure: float, r: float = 2.0) -> float:
    """L^r norm of a piecewise-constant function with uniform cell measure."""
    a = np.abs(np.asarray(values, dtype=np.float64))
    if math.isinf(r):
        return float(a.max()) if a.size else 0.0
    if r == 1:
        return float(cell_measure * a.sum())
    if r == 2:
        return float(math.sqrt(cell_measure * np.dot(a, a)))
    return float((cell_measure * np.sum(a**r)) ** (1.0 / r))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

INDICATOR = "indicator"
POLYNOMIAL = "polynomial"
TABLE = "table"


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Radial kernel profile K: [0, inf) -> [0, inf) supported on [0, 1].

    ``shape`` is one of ``"indicator"`` (K = 1 on [0, 1]), ``"polynomial"``
    (K(r) = (1 - r)_+^a) or ``"table"`` (linear interpolation of samples).
    """

    shape: str = INDICATOR
    exponent: float = 1.0
    table_r: Optional[np.ndarray] = None
    table_k: Optional[np.ndarray] = None
    holder_exponent: float = 1.0

    def __post_init__(self):
        if self.shape not in (INDICATOR, POLYNOMIAL, TABLE):
            raise InvariantViolation(f"unknown kernel shape {self.shape!r}")
        if not 0.0 < self.holder_exponent <= 1.0:
            raise InvariantViolation("holder_exponent must lie in (0, 1]")
        if self.shape == POLYNOMIAL and not self.exponent >= 1.0:
            raise InvariantViolation("polynomial kernel exponent must be >= 1")
        if self.shape == TABLE:
            if self.table_r is None or self.table_k is None:
                raise InvariantViolation("table kernel needs samples")
            r = _frozen_array(self.table_r)
            k = _frozen_array(self.table_k)
            if r.ndim != 1 or r.shape != k.shape or r.size < 2:
                raise InvariantViolation("table kernel needs two equal-length sample columns")
            if np.any(np.diff(r) <= 0):
                raise InvariantViolation("table radii must be strictly increasing")
            if r[0] < 0 or r[-1] > 1:
                raise InvariantViolation("table radii must lie in [0, 1]")
            if np.any(k < 0) or not np.all(np.isfinite(k)):
                raise InvariantViolation("table kernel values must be finite and nonnegative")
            object.__setattr__(self, "table_r", r)
            object.__setattr__(self, "table_k", k)

    @classmethod
    def indicator(cls, holder_exponent: float = 1.0) -> "KernelSpec":
        return cls(INDICATOR, holder_exponent=holder_exponent)

    @classmethod
    def polynomial(cls, a: float, holder_exponent: float = 1.0) -> "KernelSpec":
        return cls(POLYNOMIAL, exponent=float(a), holder_exponent=holder_exponent)

    @classmethod
    def table(cls, r, k, holder_exponent: float = 1.0) -> "KernelSpec":
        return cls(TABLE, table_r=r, table_k=k, holder_exponent=holder_exponent)

    @property
    def sup(self) -> float:
        if self.shape == TABLE:
            return float(self.table_k.max())
        return 1.0

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        inside = (r >= 0.0) & (r <= 1.0)
        if self.shape == INDICATOR:
            return np.where(inside, 1.0, 0.0)
        if self.shape == POLYNOMIAL:
            return np.where(inside, np.clip(1.0 - r, 0.0, None) ** self.exponent, 0.0)
        vals = np.interp(r, self.table_r, self.table_k, left=self.table_k[0], right=0.0)
        # outside the sampled radii but inside [0,1] the last sample is held
        vals = np.where((r > self.table_r[-1]) & inside, self.table_k[-1], vals)
        return np.where(inside, vals, 0.0)

    def describe(self) -> dict:
        out = {"shape": self.shape, "holder_exponent": self.holder_exponent}
        if self.shape == POLYNOMIAL:
            out["exponent"] = self.exponent
        if self.shape == TABLE:
            out["samples"] = int(self.table_r.size)
        return out


DETERMINISTIC = "deterministic"
RANDOM_GRAPH = "random_graph"


@dataclass(frozen=True)
class Origin:
    kind: str = DETERMINISTIC
    seed: Optional[int] = None
    rho: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC, RANDOM_GRAPH):
            raise InvariantViolation(f"unknown matrix origin {self.kind!r}")
        if self.kind == RANDOM_GRAPH and (self.seed is None or self.rho is None):
            raise InvariantViolation("random graph origin needs seed and rho")


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Sparse symmetric nonnegative weight matrix on the cells of a partition."""

    partition: Partition
    matrix: sparse.csr_matrix
    origin: Origin = field(default_factory=Origin)

    def __post_init__(self):
        m = sparse.csr_matrix(self.matrix, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.sort_indices()
        N = self.partition.cell_count
        if m.shape != (N, N):
            raise InvariantViolation(f"matrix shape {m.shape} does not match {N} cells")
        if not np.all(np.isfinite(m.data)):
            raise NonFinite("kernel matrix has non-finite entries")
        if np.any(m.data < 0):
            raise InvariantViolation("kernel matrix entries must be nonnegative")
        if (m != m.T).nnz != 0:
            raise InvariantViolation("kernel matrix must be exactly symmetric")
        if self.origin.kind == RANDOM_GRAPH and np.any(m.diagonal() != 0):
            raise InvariantViolation("random graph weights must have a zero diagonal")
        for a in (m.data, m.indices, m.indptr):
            a.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def entry(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def row_means(self) -> np.ndarray:
        """(1/n^d) * sum_j K_ij, the L^1 norm of each injected row."""
        return np.asarray(self.matrix.sum(axis=1)).ravel() * self.partition.cell_measure


# ---------------------------------------------------------------------------
# Fidelity operator (discrete A*A)
# ---------------------------------------------------------------------------

IDENTITY = "identity"
DIAGONAL = "diagonal"


@dataclass(frozen=True, eq=False)
class FidelityOperator:
    """Cellwise operator G = A*A; identity or a strictly positive diagonal."""

    kind: str = IDENTITY
    weights: Optional[CellFunction] = None

    def __post_init__(self):
        if self.kind == IDENTITY:
            if self.weights is not None:
                raise InvariantViolation("identity fidelity takes no weights")
        elif self.kind == DIAGONAL:
            if not isinstance(self.weights, CellFunction):
                raise InvariantViolation("diagonal fidelity needs a CellFunction of weights")
            if np.any(self.weights.values <= 0):
                raise InvariantViolation("diagonal fidelity weights must be strictly positive")
        else:
            raise InvariantViolation(
                f"unsupported fidelity kind {self.kind!r}; only identity and positive "
                "diagonal operators preserve order"
            )

    @classmethod
    def identity(cls) -> "FidelityOperator":
        return cls(IDENTITY)

    @classmethod
    def diagonal(cls, weights: CellFunction) -> "FidelityOperator":
        return cls(DIAGONAL, weights)

    def diag(self, cell_count: int) -> np.ndarray:
        if self.kind == IDENTITY:
            return np.ones(cell_count)
        if self.weights.values.shape[0] != cell_count:
            raise PartitionMismatch("fidelity weights live on a different partition")
        return np.asarray(self.weights.values)

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.kind == IDENTITY:
            return values.copy()
        return self.diag(values.shape[0]) * values

    @property
    def c_op(self) -> float:
        """Operator norm of A with A = sqrt(G)."""
        if self.kind == IDENTITY:
            return 1.0
        return float(math.sqrt(self.weights.values.max()))

    def describe(self) -> dict:
        if self.kind == IDENTITY:
            return {"kind": IDENTITY}
        return {"kind": DIAGONAL, "max_weight": float(self.weights.values.max())}


# ---------------------------------------------------------------------------
# Problem, schedule, trajectory
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One gradient-flow problem: exponent, weight, kernel, fidelity and data."""

    p: float
    mu: float
    kernel: KernelSpec
    fidelity: FidelityOperator
    data: CellFunction
    initial: CellFunction

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p >= 2):
            raise InvariantViolation(f"p must be >= 2, got {self.p}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise InvariantViolation(f"mu must be > 0, got {self.mu}")
        self.initial.check_partition(self.data.partition)
        if self.fidelity.kind == DIAGONAL:
            self.fidelity.weights.check_partition(self.data.partition)

    @property
    def partition(self) -> Partition:
        return self.data.partition


@dataclass(frozen=True)
class FeasibilityEntry:
    name: str
    satisfied: bool
    margin: float

    def as_dict(self) -> dict:
        return {"name": self.name, "satisfied": bool(self.satisfied), "margin": self.margin}


@dataclass(frozen=True)
class Schedule:
    """Length scale, time step and horizon for one resolution n."""

    n: int
    kappa: float
    eps: float
    tau: float
    T: float
    N: int
    c_op: float
    feasibility_report: tuple[FeasibilityEntry, ...] = ()

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvariantViolation("kappa must be positive")
        if not 0 < self.eps < 1:
            raise InvariantViolation("eps must lie in (0, 1)")
        if not self.tau > 0:
            raise InvariantViolation("tau must be positive")
        if self.N * self.tau < self.T:
            raise InvariantViolation("N * tau must cover the horizon T")
        if self.c_op < 0:
            raise InvariantViolation("c_op must be nonnegative")
        for entry in self.feasibility_report:
            if not math.isfinite(entry.margin):
                raise InvariantViolation(f"non-finite margin for {entry.name}")

    def time_mesh(self) -> np.ndarray:
        return np.full(self.N, self.tau)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "kappa": self.kappa,
            "eps": self.eps,
            "tau": self.tau,
            "T": self.T,
            "N": self.N,
            "c_op": self.c_op,
            "feasibility_report": [e.as_dict() for e in self.feasibility_report],
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States u^0..u^N of a backward-Euler run together with diagnostics."""

    states: tuple[CellFunction, ...]
    times: np.ndarray
    energies: np.ndarray
    inner_iterations: np.ndarray
    schedule: Optional[Schedule] = None

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise InvariantViolation("trajectory needs at least the initial state")
        times = _frozen_array(self.times)
        energies = _frozen_array(self.energies)
        iters = _frozen_array(self.inner_iterations, dtype=np.int64)
        if times.shape[0] != len(states) or energies.shape[0] != len(states):
            raise InvariantViolation("times and energies need one entry per state")
        if iters.shape[0] != len(states) - 1:
            raise InvariantViolation("inner_iterations needs one entry per step")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise InvariantViolation("times must start at 0 and increase strictly")
        if self.schedule is not None and len(states) != self.schedule.N + 1:
            raise InvariantViolation("trajectory length must equal N + 1")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "inner_iterations", iters)

    @property
    def N(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> CellFunction:
        return self.states[-1]

    def values(self) -> np.ndarray:
        """States stacked into an (N+1, cell_count) array."""
        return np.stack([s.values for s in self.states])


FieldFn = Callable[[np.ndarray], np.ndarray]
