"""Projection, injection and kernel assembly on the uniform partition."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.special import gamma

from .core import (
    INDICATOR,
    POLYNOMIAL,
    TABLE,
    CellFunction,
    DegenerateKernel,
    InvariantViolation,
    KernelMatrix,
    KernelSpec,
    NonFinite,
    OutOfDomain,
    Origin,
    Partition,
)

__all__ = [
    "ScalarField",
    "EmptyStencilWarning",
    "quadrature_nodes",
    "project",
    "inject",
    "inject_points",
    "approximation_error",
    "compute_cpd",
    "kernel_scale",
    "assemble_kernel_matrix",
    "load_table_kernel",
]

_CHUNK = 1 << 20


class EmptyStencilWarning(UserWarning):
    """Some row of an assembled kernel matrix has no off-diagonal weight."""


@dataclass(frozen=True)
class ScalarField:
    """A deterministic function on (0,1)^d evaluated on arrays of points.

    ``evaluate`` receives an array of shape (M, d) and returns shape (M,).
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    smoothness_hint: Optional[str] = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluate(points), dtype=np.float64).reshape(-1)


def _as_field(g) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(g, ScalarField):
        return g

    def wrapped(points):
        return np.asarray(g(points), dtype=np.float64).reshape(-1)

    return wrapped


def quadrature_nodes(part: Partition, quad_order: int) -> np.ndarray:
    """Composite midpoint nodes, shape (cell_count, quad_order**d, d).

    Node ``k`` of cell ``i`` lies in cell ``i``; all nodes carry equal weight.
    """
    if quad_order < 1:
        raise InvariantViolation("quad_order must be >= 1")
    n, d, q = part.n, part.d, quad_order
    local = (np.arange(q, dtype=np.float64) + 0.5) / q
    local = np.stack(
        [g.ravel() for g in np.meshgrid(*([local] * d), indexing="ij")], axis=1
    )  # (q^d, d)
    corners = part.multi_indices().astype(np.float64)  # (N, d)
    return (corners[:, None, :] + local[None, :, :]) / n


def _node_values(g, part: Partition, quad_order: int) -> np.ndarray:
    field = _as_field(g)
    nodes = quadrature_nodes(part, quad_order)
    N, Q, d = nodes.shape
    flat = nodes.reshape(N * Q, d)
    out = np.empty(N * Q)
    for start in range(0, N * Q, _CHUNK):
        out[start : start + _CHUNK] = field(flat[start : start + _CHUNK])
    if not np.all(np.isfinite(out)):
        raise NonFinite("field returned NaN or Inf at a quadrature node")
    return out.reshape(N, Q)


def project(g, part: Partition, quad_order: int = 4) -> CellFunction:
    """Cell averages of ``g`` by the tensor composite midpoint rule."""
    vals = _node_values(g, part, quad_order)
    return CellFunction(part, vals.mean(axis=1))


def inject_points(v: CellFunction, points) -> np.ndarray:
    """Piecewise-constant extension of ``v`` evaluated at an (M, d) array of points.

    Cells are half-open, so a point on an interior face belongs to the cell
    with the larger index.  Points within 1e-12 of the outer faces are snapped
    inside.
    """
    part = v.partition
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[1] != part.d:
        raise OutOfDomain(f"points must have {part.d} coordinates")
    if not np.all(np.isfinite(x)) or np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
        raise OutOfDomain("point outside the unit cube")
    idx = np.floor(np.clip(x, 0.0, None) * part.n).astype(np.int64)
    idx = np.minimum(idx, part.n - 1)
    flat = np.ravel_multi_index(tuple(idx.T), part.shape)
    return v.values[flat]


def inject(v: CellFunction, x) -> float:
    """Value of the piecewise-constant extension of ``v`` at one point."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(inject_points(v, x)[0])


def approximation_error(g, part: Partition, q: float = 2.0, quad_order: int = 4) -> float:
    """L^q distance between ``g`` and its piecewise-constant projection.

    Both are sampled on the midpoint quadrature grid used by :func:`project`;
    ``q = inf`` takes the maximum over the nodes.
    """
    if not (q >= 1):
        raise InvariantViolation("q must be >= 1")
    vals = _node_values(g, part, quad_order)
    dev = np.abs(vals - vals.mean(axis=1, keepdims=True))
    if math.isinf(q):
        return float(dev.max())
    w = part.cell_measure / vals.shape[1]
    return float((w * np.sum(dev**q)) ** (1.0 / q))


# ---------------------------------------------------------------------------
# Kernel normalisation and assembly
# ---------------------------------------------------------------------------


def _radial_breaks(kernel: KernelSpec) -> np.ndarray:
    pts = [0.0, 1.0]
    if kernel.shape == TABLE:
        pts.extend(float(r) for r in kernel.table_r)
    return np.unique(np.clip(pts, 0.0, 1.0))


def _gauss_segments(breaks: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        h = 0.5 * (b - a)
        nodes.append(a + h * (x + 1.0))
        weights.append(h * w)
    return np.concatenate(nodes), np.concatenate(weights)


def compute_cpd(kernel: KernelSpec, p: float, d: int, quad_order: int = 64) -> float:
    """Moment c(p,d) = int_{R^d} K(|x|) |x_d|^p dx of the kernel profile.

    Reduced to a radial integral over [0, 1] times the p-th absolute moment of
    the last coordinate over the unit sphere; the radial part uses composite
    Gauss-Legendre split at the kernel's breakpoints.
    """
    if p < 2:
        raise InvariantViolation("p must be >= 2")
    if d < 1:
        raise InvariantViolation("d must be >= 1")
    r, w = _gauss_segments(_radial_breaks(kernel), quad_order)
    radial = float(np.sum(w * kernel(r) * r ** (p + d - 1)))
    sphere = 2.0 * math.pi ** ((d - 1) / 2.0) * gamma((p + 1) / 2.0) / gamma((d + p) / 2.0)
    c = radial * sphere
    if not c > 1e-14:
        raise DegenerateKernel(f"c(p,d) = {c:.3e} is not positive")
    return c


def kernel_scale(kernel: KernelSpec, eps: float, p: float, d: int) -> float:
    """Prefactor 2 / (c(p,d) eps^(d+p)) of the scaled kernel."""
    return 2.0 / (compute_cpd(kernel, p, d) * eps ** (d + p))


def _offset_axis_rule(o: int, n: int, order: int, kinks: np.ndarray):
    """Nodes/weights for the density of y - x, x and y uniform on cells o apart.

    The density is the triangle on [(o-1)/n, (o+1)/n] peaking at o/n; the rule
    is exact for integrands that are polynomial between ``kinks``.
    """
    lo, mid, hi = (o - 1) / n, o / n, (o + 1) / n
    brk = [lo, mid, hi]
    brk.extend(k for k in kinks if lo < k < hi)
    brk = np.unique(brk)
    s, w = _gauss_segments(brk, order)
    dens = n * (1.0 - np.abs(s * n - o))
    return s, w * dens


def _offset_average(kernel: KernelSpec, offset, n: int, eps: float, order: int, d: int) -> float:
    if d == 1:
        r_kinks = _radial_breaks(kernel) * eps
        kinks = np.concatenate([r_kinks, -r_kinks])
        s, w = _offset_axis_rule(offset[0], n, order, kinks)
        return float(np.sum(w * kernel(np.abs(s) / eps)))
    sq = np.zeros(1)
    wt = np.ones(1)
    for o in offset:
        s, w = _offset_axis_rule(o, n, order, np.empty(0))
        sq = (sq[:, None] + (s * s)[None, :]).ravel()
        wt = (wt[:, None] * w[None, :]).ravel()
    return float(np.sum(wt * kernel(np.sqrt(sq) / eps)))


def _stencil(kernel, eps, part: Partition, quad_order: int, center_mode: bool):
    """Canonical (nonnegative) offsets within reach and their cell-pair averages."""
    n, d = part.n, part.d
    reach = eps + math.sqrt(d) / n
    kmax = min(n - 1, int(math.floor(reach * n)))
    offsets, values = [], []
    for o in itertools.product(range(kmax + 1), repeat=d):
        dist = math.sqrt(sum(k * k for k in o)) / n
        if dist > reach:
            continue
        if center_mode:
            val = float(kernel(np.array([dist / eps]))[0])
        else:
            val = _offset_average(kernel, o, n, eps, quad_order, d)
        if val != 0.0:
            offsets.append(o)
            values.append(val)
    return offsets, values


def assemble_kernel_matrix(
    kernel: KernelSpec,
    eps: float,
    p: float,
    part: Partition,
    quad_order: int = 8,
    center_mode: bool = False,
) -> KernelMatrix:
    """Projected scaled kernel matrix K_ij = avg over cell pair of K_eps(|x - y|).

    K_eps = 2 / (c(p,d) eps^(d+p)) K(. / eps).  On the uniform partition the
    cell-pair average depends only on the absolute index offset per axis, so
    each distinct offset is integrated once and scattered; this makes the
    result exactly symmetric.  Pairs whose centers are farther apart than
    eps + sqrt(d)/n are never stored.
    """
    if not 0 < eps <= 1:
        raise InvariantViolation("eps must lie in (0, 1]")
    if quad_order < 1:
        raise InvariantViolation("quad_order must be >= 1")
    scale = kernel_scale(kernel, eps, p, part.d)
    offsets, values = _stencil(kernel, eps, part, quad_order, center_mode)
    n, d = part.n, part.d
    multi = part.multi_indices()
    rows, cols, data = [], [], []
    seen = set()
    for o, val in zip(offsets, values):
        for signs in itertools.product((1, -1), repeat=d):
            so = tuple(s * k for s, k in zip(signs, o))
            if so in seen:
                continue
            seen.add(so)
            target = multi + np.asarray(so)[None, :]
            ok = np.all((target >= 0) & (target < n), axis=1)
            src = np.nonzero(ok)[0]
            dst = np.ravel_multi_index(tuple(target[ok].T), part.shape)
            rows.append(src)
            cols.append(dst)
            data.append(np.full(src.shape[0], scale * val))
    N = part.cell_count
    if rows:
        mat = sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
        )
    else:
        mat = sparse.csr_matrix((N, N))
    off = mat - sparse.diags(mat.diagonal())
    off.eliminate_zeros()
    if N > 1 and np.any(np.diff(off.indptr) == 0):
        warnings.warn(
            f"eps={eps} is too small for n={n}: some rows have no neighbours",
            EmptyStencilWarning,
            stacklevel=2,
        )
    return KernelMatrix(part, mat, Origin())


def load_table_kernel(path, holder_exponent: float = 1.0) -> KernelSpec:
    """Read a two-column CSV (r, K(r)) into a table kernel; a header row is skipped."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    arr = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if arr.shape[1] != 2:
        raise InvariantViolation("table kernel CSV must have exactly two columns")
    return KernelSpec.table(arr[:, 0], arr[:, 1], holder_exponent=holder_exponent)
