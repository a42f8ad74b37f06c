"""Sparse random weight matrices drawn from a projected kernel.

Each unordered pair {i, j} is an edge of weight 1/rho with probability
rho * K_ij.  Draws come from a counter-based hash of (seed, i, j) with
i < j, so a sample is reproducible bit for bit and independent of the
order in which pairs are visited.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from ._backend import kernels
from .core import (
    RANDOM_GRAPH,
    InvariantViolation,
    KernelMatrix,
    Origin,
    Partition,
    PartitionMismatch,
    ProblemSpec,
    ScaleViolation,
    Trajectory,
)
from .flow import InnerSolverConfig, evolve

__all__ = [
    "GraphModelSpec",
    "sample_graph",
    "row_sum_deviation",
    "evolve_graph",
    "compliant_rho",
    "rho_report",
    "theta_band",
    "write_triplets",
    "read_triplets",
]


def _offdiag_upper(base: KernelMatrix):
    up = sparse.triu(base.matrix, k=1, format="coo")
    order = np.lexsort((up.col, up.row))
    return up.row[order].astype(np.int64), up.col[order].astype(np.int64), up.data[order]


@dataclass(frozen=True, eq=False)
class GraphModelSpec:
    base: KernelMatrix
    rho: float
    seed: int

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise InvariantViolation("rho must lie in (0, 1]")
        if not isinstance(self.seed, (int, np.integer)):
            raise InvariantViolation("seed must be an integer")
        _, _, w = _offdiag_upper(self.base)
        if w.size and self.rho * w.max() > 1.0:
            raise ScaleViolation(
                f"rho * max K = {self.rho * w.max():.4g} > 1; lower rho or raise eps"
            )


def sample_graph(spec: GraphModelSpec) -> KernelMatrix:
    i, j, w = _offdiag_upper(spec.base)
    u = kernels.pair_uniforms(int(spec.seed), i, j)
    keep = u < spec.rho * w
    i, j = i[keep], j[keep]
    N = spec.base.partition.cell_count
    weight = np.full(i.shape[0], 1.0 / spec.rho)
    mat = sparse.csr_matrix(
        (np.concatenate([weight, weight]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(N, N),
    )
    return KernelMatrix(spec.base.partition, mat, Origin(RANDOM_GRAPH, int(spec.seed), float(spec.rho)))


def row_sum_deviation(lam: KernelMatrix, base: KernelMatrix) -> float:
    """|max_i mean_j Lam_ij - max_i mean_j K_ij|, the gap between sup-row L^1 norms."""
    if lam.partition != base.partition:
        raise PartitionMismatch(f"{lam.partition} != {base.partition}")
    return float(abs(lam.row_means().max() - base.row_means().max()))


def evolve_graph(
    spec: ProblemSpec,
    gspec: GraphModelSpec,
    time_mesh: Sequence[float],
    cfg: InnerSolverConfig = InnerSolverConfig(),
) -> Trajectory:
    return evolve(spec, sample_graph(gspec), time_mesh, cfg)


def compliant_rho(base: KernelMatrix, eps: float, p: float, fraction: float = 0.5) -> float:
    """A sparsity level below both rho * K <= 1 and rho << eps^(p+1)."""
    if not 0 < fraction <= 1:
        raise InvariantViolation("fraction must lie in (0, 1]")
    _, _, w = _offdiag_upper(base)
    cap = eps ** (p + 1)
    if w.size:
        cap = min(cap, 1.0 / w.max())
    return fraction * cap


def rho_report(rho: float, eps: float, p: float, n: int) -> list[dict]:
    """Ratios for log(n) eps^(2p) / n << rho << eps^(p+1); both should exceed 1."""
    lower = math.log(n) * eps ** (2 * p) / n
    upper = eps ** (p + 1)
    return [
        {"name": "rho_above_concentration_floor", "satisfied": bool(rho > lower), "margin": rho / lower},
        {"name": "rho_below_eps_power", "satisfied": bool(rho < upper), "margin": upper / rho},
    ]


def theta_band(eps: float, n: int, kappa: float, p: float) -> tuple[float, float]:
    """Admissible band (lo, hi) for theta^2 in the random-graph rate."""
    L = math.log(eps ** (-kappa))
    lo = L ** (2 * (p - 1)) / (eps ** (1 + 3 * p) * math.log(n))
    hi = eps ** (2 * kappa)
    return lo, hi


def write_triplets(lam: KernelMatrix, path) -> None:
    """Sparse (i, j, weight) CSV preceded by a ``# {json}`` header line."""
    coo = lam.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    header = {
        "seed": lam.origin.seed,
        "rho": lam.origin.rho,
        "n": lam.partition.n,
        "d": lam.partition.d,
        "origin": lam.origin.kind,
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("i,j,weight\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{int(r)},{int(c)},{float(v)!r}\n")


def read_triplets(path) -> KernelMatrix:
    with open(path) as fh:
        header = json.loads(fh.readline()[1:])
        fh.readline()
        rows = [line.strip().split(",") for line in fh if line.strip()]
    part = Partition(header.get("d", 1), header["n"])
    N = part.cell_count
    if rows:
        arr = np.array(rows, dtype=object)
        i = arr[:, 0].astype(np.int64)
        j = arr[:, 1].astype(np.int64)
        w = arr[:, 2].astype(np.float64)
    else:
        i = j = np.empty(0, dtype=np.int64)
        w = np.empty(0)
    mat = sparse.csr_matrix((w, (i, j)), shape=(N, N))
    if header.get("origin") == RANDOM_GRAPH:
        origin = Origin(RANDOM_GRAPH, header["seed"], header["rho"])
    else:
        origin = Origin()
    return KernelMatrix(part, mat, origin)
