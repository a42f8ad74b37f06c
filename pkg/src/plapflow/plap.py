"""Discrete nonlocal p-Laplacian, its energy and the implicit-step objective.

Inner products and norms are weighted by the cell measure m, so that
``<u, v>_m = m * sum(u * v)`` equals the L^2 inner product of the injections.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ._backend import kernels
from .core import (
    CellFunction,
    FidelityOperator,
    InvariantViolation,
    KernelMatrix,
    PartitionMismatch,
)

__all__ = [
    "StepObjective",
    "apply_plap",
    "nonlocal_energy",
    "plap_hessian",
    "step_objective_value",
    "step_residual",
]


def _csr(kmat: KernelMatrix):
    m = kmat.matrix
    return (
        np.asarray(m.indptr, dtype=np.int32),
        np.asarray(m.indices, dtype=np.int32),
        np.asarray(m.data, dtype=np.float64),
    )


_PATTERNS: "weakref.WeakKeyDictionary[KernelMatrix, tuple]" = weakref.WeakKeyDictionary()


def _pattern(kmat: KernelMatrix):
    """CSR arrays of K with every diagonal slot present, plus the diagonal positions."""
    cached = _PATTERNS.get(kmat)
    if cached is None:
        N = kmat.partition.cell_count
        # diagonal values are never read by the Hessian kernel, only their slots
        aug = (kmat.matrix + sparse.identity(N, format="csr")).tocsr()
        aug.sort_indices()
        indptr = np.asarray(aug.indptr, dtype=np.int32)
        indices = np.asarray(aug.indices, dtype=np.int32)
        data = np.asarray(aug.data, dtype=np.float64)
        rows = np.repeat(np.arange(N), np.diff(indptr))
        diagpos = np.nonzero(indices == rows)[0].astype(np.int32)
        if diagpos.shape[0] != N:
            raise RuntimeError("diagonal pattern construction failed")
        cached = (indptr, indices, data, diagpos)
        _PATTERNS[kmat] = cached
    return cached


def _values(kmat: KernelMatrix, v) -> np.ndarray:
    if isinstance(v, CellFunction):
        if v.partition != kmat.partition:
            raise PartitionMismatch(f"{v.partition} != {kmat.partition}")
        return np.ascontiguousarray(v.values, dtype=np.float64)
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.shape != (kmat.partition.cell_count,):
        raise PartitionMismatch(f"vector of shape {arr.shape} does not fit {kmat.partition}")
    return arr


def _apply(kmat: KernelMatrix, v: np.ndarray, p: float) -> np.ndarray:
    indptr, indices, data = _csr(kmat)
    return kernels.plap_apply(indptr, indices, data, v, kmat.partition.cell_measure, float(p))


def _energy(kmat: KernelMatrix, v: np.ndarray, p: float) -> float:
    indptr, indices, data = _csr(kmat)
    return float(kernels.plap_energy(indptr, indices, data, v, kmat.partition.cell_measure, float(p)))


def apply_plap(kmat: KernelMatrix, v, p: float) -> CellFunction:
    """(Delta v)_i = -sum_j m K_ij psi_p(v_j - v_i), psi_p(t) = |t|^(p-2) t."""
    if p < 2:
        raise InvariantViolation("p must be >= 2")
    vals = _values(kmat, v)
    return CellFunction(kmat.partition, _apply(kmat, vals, p))


def nonlocal_energy(kmat: KernelMatrix, v, p: float) -> float:
    """(1/2p) sum_ij m^2 K_ij |v_j - v_i|^p; its m-weighted gradient is apply_plap."""
    if p < 2:
        raise InvariantViolation("p must be >= 2")
    return _energy(kmat, _values(kmat, v), p)


def plap_hessian(kmat: KernelMatrix, v: np.ndarray, p: float) -> sparse.csr_matrix:
    """Jacobian of apply_plap at v: the Laplacian of weights m K_ij (p-1)|v_j - v_i|^(p-2)."""
    indptr, indices, data = _csr(kmat)
    w = kernels.plap_jacobian_weights(
        indptr, indices, data, _values(kmat, v), kmat.partition.cell_measure, float(p)
    )
    N = kmat.partition.cell_count
    W = sparse.csr_matrix((w, indices, indptr), shape=(N, N))
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sparse.diags(deg) - W).tocsr()


@dataclass(frozen=True, eq=False)
class StepObjective:
    """Strictly convex objective whose minimiser is one backward-Euler step.

    value(v) = tau mu E(v) + (tau/2) <G v, v>_m - tau <f, v>_m + (1/2) |v - anchor|_m^2
    """

    kmat: KernelMatrix
    p: float
    mu: float
    tau: float
    fidelity: FidelityOperator
    data: CellFunction
    anchor: CellFunction

    def __post_init__(self):
        if not self.tau > 0:
            raise InvariantViolation("tau must be positive")
        if self.p < 2:
            raise InvariantViolation("p must be >= 2")
        if self.mu < 0:
            raise InvariantViolation("mu must be nonnegative")
        part = self.kmat.partition
        for cf in (self.data, self.anchor):
            if cf.partition != part:
                raise PartitionMismatch(f"{cf.partition} != {part}")
        self.fidelity.diag(part.cell_count)

    @property
    def partition(self):
        return self.kmat.partition

    # array-level versions used by the solvers
    def _value(self, v: np.ndarray) -> float:
        m = self.partition.cell_measure
        g = self.fidelity.diag(v.shape[0])
        e = _energy(self.kmat, v, self.p) if self.mu != 0 else 0.0
        dv = v - self.anchor.values
        return float(
            self.tau * self.mu * e
            + 0.5 * self.tau * m * np.dot(g * v, v)
            - self.tau * m * np.dot(self.data.values, v)
            + 0.5 * m * np.dot(dv, dv)
        )

    def _residual(self, v: np.ndarray) -> np.ndarray:
        lap = _apply(self.kmat, v, self.p) if self.mu != 0 else 0.0
        g = self.fidelity.diag(v.shape[0])
        return self.tau * (self.mu * lap + g * v - self.data.values) + v - self.anchor.values

    def _hessian(self, v: np.ndarray) -> sparse.csr_matrix:
        """Hessian of value divided by m: I + tau (mu J + G)."""
        g = self.fidelity.diag(v.shape[0])
        indptr, indices, data, diagpos = _pattern(self.kmat)
        vals = kernels.step_hessian_data(
            indptr,
            indices,
            data,
            diagpos,
            v,
            self.partition.cell_measure,
            float(self.p),
            self.tau * self.mu,
            1.0 + self.tau * g,
        )
        N = v.shape[0]
        return sparse.csr_matrix((vals, indices, indptr), shape=(N, N))


def step_objective_value(obj: StepObjective, v) -> float:
    return obj._value(_values(obj.kmat, v))


def step_residual(obj: StepObjective, v) -> CellFunction:
    """tau (mu Delta v + G v - f) + v - anchor; zero exactly at the step's minimiser."""
    return CellFunction(obj.partition, obj._residual(_values(obj.kmat, v)))
