"""Independent reference computations used to cross-check the solver.

Nothing here goes through the CSR kernels or the Newton step solver except
where noted: the brute-force operator works on dense arrays, and the direct
minimiser is a Barzilai-Borwein gradient method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    CellFunction,
    DegenerateFit,
    InvariantViolation,
    KernelMatrix,
    KernelSpec,
    MarginViolation,
    NoConvergence,
    Partition,
    ProblemSpec,
    TooLarge,
    UnknownTest,
)
from .discretize import assemble_kernel_matrix, project
from .flow import discrete_F
from .plap import apply_plap

__all__ = [
    "AFFINE",
    "QUADRATIC",
    "RatePoints",
    "local_plap_closed_form",
    "test_function",
    "minimize_F_direct",
    "brute_force_plap",
    "rate_regression",
    "nonlocal_consistency_error",
]

AFFINE = "affine"
QUADRATIC = "quadratic"


def test_function(test_id: str, d: int):
    """The benchmark field u for ``test_id`` as a callable on (M, d) arrays."""
    if test_id == AFFINE:
        slopes = 0.7 / np.arange(1, d + 1)
        return lambda x: 1.0 + np.asarray(x) @ slopes
    if test_id == QUADRATIC:
        return lambda x: 0.5 * np.sum(np.asarray(x) ** 2, axis=1)
    raise UnknownTest(test_id)


def local_plap_closed_form(test_id: str, x, p: float, d: int = 1):
    """-div(|grad u|^(p-2) grad u) for the benchmark fields.

    Affine fields give 0.  For u = |x|^2 / 2 the value is -(d + p - 2)|x|^(p-2),
    i.e. -(p - 1)|x|^(p-2) in one dimension.
    """
    if p < 2:
        raise InvariantViolation("p must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    pts = x.reshape(-1, d)
    if test_id == AFFINE:
        out = np.zeros(pts.shape[0])
    elif test_id == QUADRATIC:
        r = np.linalg.norm(pts, axis=1)
        out = -(d + p - 2.0) * (np.ones_like(r) if p == 2 else r ** (p - 2))
    else:
        raise UnknownTest(test_id)
    return float(out[0]) if x.ndim <= 1 and pts.shape[0] == 1 else out


def _residual(spec: ProblemSpec, kmat: KernelMatrix, v: np.ndarray) -> np.ndarray:
    g = spec.fidelity.diag(v.shape[0])
    return spec.mu * apply_plap(kmat, v, spec.p).values + g * v - spec.data.values


def minimize_F_direct(
    spec: ProblemSpec, kmat: KernelMatrix, tol: float = 1e-10, max_iter: int = 100000
) -> CellFunction:
    """Minimiser of the discrete functional by Barzilai-Borwein gradient descent.

    Stops when |mu Delta v + G v - f|_inf <= tol.  Steps are safeguarded by
    Armijo backtracking on the functional.
    """
    m = kmat.partition.cell_measure
    g = spec.fidelity.diag(kmat.partition.cell_count)
    v = np.array(spec.data.values / g)
    F = discrete_F(spec, kmat, v)
    R = _residual(spec, kmat, v)
    alpha = 1.0
    for it in range(max_iter):
        res = float(np.max(np.abs(R)))
        if res <= tol:
            return CellFunction(kmat.partition, v)
        d = -alpha * R
        slope = m * float(np.dot(R, d))
        t = 1.0
        roundoff = 8.0 * np.finfo(float).eps * max(1.0, abs(F))
        while True:
            cand = v + t * d
            Fc = discrete_F(spec, kmat, cand)
            if Fc <= F + 1e-4 * t * slope + roundoff:
                break
            t *= 0.5
            if t < 1e-16:
                raise NoConvergence(it, res)
        Rc = _residual(spec, kmat, cand)
        s = cand - v
        y = Rc - R
        sy = float(np.dot(s, y))
        alpha = float(np.dot(s, s)) / sy if sy > 0 else alpha * 2.0
        alpha = min(max(alpha, 1e-12), 1e12)
        v, F, R = cand, Fc, Rc
    raise NoConvergence(max_iter, float(np.max(np.abs(R))))


def brute_force_plap(kmat: KernelMatrix, v, p: float) -> CellFunction:
    """Dense re-derivation of the discrete p-Laplacian (at most 4096 cells)."""
    part = kmat.partition
    if part.cell_count > 4096:
        raise TooLarge(f"{part.cell_count} cells exceed the brute-force limit of 4096")
    vals = np.asarray(v.values if isinstance(v, CellFunction) else v, dtype=np.float64)
    K = kmat.matrix.toarray()
    diff = vals[None, :] - vals[:, None]
    flux = np.sign(diff) * np.abs(diff) ** (p - 1.0)
    out = np.empty(part.cell_count)
    for i in range(part.cell_count):
        out[i] = -part.cell_measure * math.fsum(K[i] * flux[i])
    return CellFunction(part, out)


@dataclass(frozen=True)
class RatePoints:
    resolutions: tuple[float, ...]
    errors: tuple[float, ...]

    def __post_init__(self):
        r = np.asarray(self.resolutions, dtype=np.float64)
        e = np.asarray(self.errors, dtype=np.float64)
        if r.shape != e.shape or r.ndim != 1:
            raise InvariantViolation("need matching 1-d sequences")
        if r.size < 3:
            raise InvariantViolation("need at least 3 samples")
        if np.any(r <= 0) or np.any(e <= 0):
            raise InvariantViolation("resolutions and errors must be positive")
        dr = np.diff(r)
        if not (np.all(dr > 0) or np.all(dr < 0) or np.all(dr == 0)):
            raise InvariantViolation("resolutions must be strictly monotone")
        object.__setattr__(self, "resolutions", tuple(float(x) for x in r))
        object.__setattr__(self, "errors", tuple(float(x) for x in e))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "RatePoints":
        r, e = zip(*pairs)
        return cls(tuple(r), tuple(e))


def rate_regression(pts: RatePoints) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(resolution), and R^2."""
    x = np.log(np.asarray(pts.resolutions))
    y = np.log(np.asarray(pts.errors))
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0:
        raise DegenerateFit("all resolutions are equal")
    yc = y - y.mean()
    slope = float(np.dot(xc, yc)) / sxx
    ss_tot = float(np.dot(yc, yc))
    ss_res = float(np.sum((yc - slope * xc) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, r2


def nonlocal_consistency_error(
    kernel: KernelSpec,
    eps: float,
    p: float,
    d: int,
    test_id: str,
    interior_margin: float = 0.25,
    fine_n: int | None = None,
    quad_order: int = 8,
) -> float:
    """Max interior gap between the discrete nonlocal operator and the local p-Laplacian."""
    if not eps < interior_margin:
        raise MarginViolation(f"eps = {eps} must be below the interior margin {interior_margin}")
    if fine_n is None:
        # the continuum gap can vanish, so h must shrink faster than eps to expose the rate
        fine_n = max(math.ceil(16.0 / eps), math.ceil(4.0 / eps**2))
    if fine_n < 8.0 / eps:
        raise MarginViolation(f"fine_n = {fine_n} is below 8 / eps")
    part = Partition(d, int(fine_n))
    u = project(test_function(test_id, d), part, quad_order=4)
    kmat = assemble_kernel_matrix(kernel, eps, p, part, quad_order=quad_order)
    lap = apply_plap(kmat, u, p).values
    centers = part.centers()
    inside = np.all((centers > interior_margin) & (centers < 1.0 - interior_margin), axis=1)
    exact = np.atleast_1d(local_plap_closed_form(test_id, centers[inside], p, d))
    return float(np.max(np.abs(lap[inside] - exact)))
