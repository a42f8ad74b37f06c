"""Backward-Euler time stepping, the step solver and the (eps, tau, T) scheduler."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import cg
from scipy.special import lambertw

from .core import (
    CellFunction,
    FeasibilityEntry,
    InfeasibleSchedule,
    InvariantViolation,
    KernelMatrix,
    NoConvergence,
    OutOfRange,
    ProblemSpec,
    Schedule,
    Trajectory,
    weighted_norm,
)
from .plap import StepObjective, _energy, _values

__all__ = [
    "DAMPED_NEWTON",
    "GRADIENT_BACKTRACKING",
    "InnerSolverConfig",
    "ScheduleInputs",
    "implicit_step",
    "evolve",
    "discrete_F",
    "make_schedule",
    "exp_lambert_w",
    "time_interpolant",
    "uniform_mesh",
    "write_trajectory_csv",
    "trajectory_summary",
]

DAMPED_NEWTON = "damped_newton"
GRADIENT_BACKTRACKING = "gradient_backtracking"

INTERPOLATED = "interpolated"
INJECTED = "injected"


@dataclass(frozen=True)
class InnerSolverConfig:
    tol: float = 1e-10
    max_iter: int = 200
    method: str = DAMPED_NEWTON
    armijo_c: float = 1e-4
    shrink: float = 0.5
    cg_rtol: float = 1e-2

    def __post_init__(self):
        if not self.tol > 0:
            raise InvariantViolation("tol must be positive")
        if self.max_iter < 1:
            raise InvariantViolation("max_iter must be >= 1")
        if self.method not in (DAMPED_NEWTON, GRADIENT_BACKTRACKING):
            raise InvariantViolation(f"unknown inner method {self.method!r}")
        if not 0 < self.armijo_c < 1 or not 0 < self.shrink < 1:
            raise InvariantViolation("armijo_c and shrink must lie in (0, 1)")


def _newton_direction(obj: StepObjective, v: np.ndarray, r: np.ndarray, rtol: float) -> np.ndarray:
    H = obj._hessian(v)
    d = H.diagonal()
    precond = diags(1.0 / d)
    delta, _ = cg(H, -r, rtol=rtol, atol=0.0, M=precond, maxiter=max(50, 4 * r.shape[0]))
    if not np.all(np.isfinite(delta)) or np.dot(delta, r) >= 0:
        delta = -r / d
    return delta


def implicit_step(obj: StepObjective, cfg: InnerSolverConfig = InnerSolverConfig()):
    """Solve one backward-Euler step by minimising ``obj`` from its anchor.

    Returns ``(CellFunction, iterations)``; the sup-norm of the step residual
    at the returned state is at most ``cfg.tol``.
    """
    m = obj.partition.cell_measure
    v = np.array(obj.anchor.values, dtype=np.float64)
    r = obj._residual(v)
    res = float(np.max(np.abs(r))) if r.size else 0.0
    f = obj._value(v)
    it = 0
    while res > cfg.tol:
        if it >= cfg.max_iter:
            raise NoConvergence(it, res)
        if cfg.method == DAMPED_NEWTON:
            delta = _newton_direction(obj, v, r, cfg.cg_rtol)
        else:
            delta = -r
        slope = m * float(np.dot(r, delta))
        t = 1.0
        roundoff = 8.0 * np.finfo(float).eps * max(1.0, abs(f))
        while True:
            cand = v + t * delta
            fc = obj._value(cand)
            if fc <= f + cfg.armijo_c * t * slope + roundoff:
                break
            t *= cfg.shrink
            if t < 1e-14:
                raise NoConvergence(it, res)
        v, f = cand, fc
        r = obj._residual(v)
        res = float(np.max(np.abs(r)))
        it += 1
    return CellFunction(obj.partition, v), it


def discrete_F(spec: ProblemSpec, kmat: KernelMatrix, v) -> float:
    """Discrete surrogate of mu/p |grad v|_p^p + 1/2 |A v - l|^2.

    The scaled kernel already carries the local normalisation, so the
    gradient term is mu * nonlocal_energy.  With G = diag(g) and f = A* l the
    fidelity is (1/2) sum_i m g_i (v_i - f_i / g_i)^2, which reduces to
    (1/2) |v - f|_m^2 for the identity.
    """
    vals = _values(kmat, v)
    g = spec.fidelity.diag(vals.shape[0])
    m = kmat.partition.cell_measure
    resid = vals - spec.data.values / g
    return float(spec.mu * _energy(kmat, vals, spec.p) + 0.5 * m * np.sum(g * resid * resid))


def uniform_mesh(T: float, N: int) -> np.ndarray:
    return np.full(int(N), T / N)


def evolve(
    spec: ProblemSpec,
    kmat: KernelMatrix,
    time_mesh: Sequence[float],
    cfg: InnerSolverConfig = InnerSolverConfig(),
    schedule: Optional[Schedule] = None,
) -> Trajectory:
    """Iterate the implicit step over ``time_mesh`` starting from ``spec.initial``."""
    mesh = np.asarray(time_mesh, dtype=np.float64)
    if mesh.ndim != 1 or np.any(mesh <= 0) or not np.all(np.isfinite(mesh)):
        raise InvariantViolation("time steps must be positive and finite")
    spec.initial.check_partition(kmat.partition)
    states = [spec.initial]
    energies = [discrete_F(spec, kmat, spec.initial)]
    iters = []
    times = np.concatenate([[0.0], np.cumsum(mesh)])
    for k, tau in enumerate(mesh, start=1):
        obj = StepObjective(kmat, spec.p, spec.mu, float(tau), spec.fidelity, spec.data, states[-1])
        try:
            nxt, it = implicit_step(obj, cfg)
        except NoConvergence as exc:
            raise NoConvergence(exc.iterations, exc.final_residual, step=k) from None
        states.append(nxt)
        energies.append(discrete_F(spec, kmat, nxt))
        iters.append(it)
    return Trajectory(tuple(states), times, np.asarray(energies), np.asarray(iters, dtype=np.int64), schedule)


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleInputs:
    n: int
    kappa: float
    d: int
    p: float
    c_op: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    safety: float = 0.1
    max_steps: int = 10**7

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            a = getattr(self, name)
            if not 0 < a <= 1:
                raise InvariantViolation(f"{name} must lie in (0, 1]")
        if not 0 < self.safety <= 1:
            raise InvariantViolation("safety must lie in (0, 1]")
        if not self.kappa > 0:
            raise InvariantViolation("kappa must be positive")
        if self.p < 2 or self.d < 1:
            raise InvariantViolation("need p >= 2 and d >= 1")
        if self.c_op < 0:
            raise InvariantViolation("c_op must be nonnegative")


def exp_lambert_w(y: float) -> float:
    """e^{W(y)} for y >= 0, the solution z of z log z = y with z >= 1."""
    if y < 0:
        raise ValueError("y must be nonnegative")
    if y == 0:
        return 1.0
    w = float(lambertw(y).real)
    return y / w if w > 0 else math.exp(w)


def _cfl_ratio(tau: float, eps: float, inp: ScheduleInputs) -> float:
    L = math.log(eps ** (-inp.kappa))
    return tau * L ** (2 * inp.p - 3) / eps ** (2 * (inp.d + inp.p) + inp.kappa)


def eps_floors(inp: ScheduleInputs) -> dict:
    """The three power-law lower bounds on eps and the Lambert-W bound they stand in for."""
    n, k, d, p, a3 = inp.n, inp.kappa, inp.d, inp.p, inp.alpha3
    return {
        "alpha1": n ** (-inp.alpha1 / k),
        "alpha2": n ** (-inp.alpha2 / k),
        "alpha3": n ** (-a3 / (k * (1.0 + (d + p + a3) / k))),
        "lambert_w": exp_lambert_w(n ** (a3 / max(1.0 + (d + p + a3) / k, p - 1.0))) ** (-1.0 / k),
    }


def make_schedule(inp: ScheduleInputs, eps_override: Optional[float] = None) -> Schedule:
    """Choose eps, tau, T and N for resolution ``inp.n``.

    eps is the largest power-law floor divided by ``safety``; tau is
    ``safety`` times the CFL-type bound eps^(2(d+p)+kappa) / log(eps^-kappa)^(2p-3);
    T = log(eps^-kappa) / (1 + c_op^4).
    """
    if inp.n < 2:
        raise InfeasibleSchedule("n must be >= 2")
    floors = eps_floors(inp)
    if eps_override is not None:
        eps = eps_override
    else:
        top = max(floors["alpha1"], floors["alpha2"], floors["alpha3"])
        eps = top / inp.safety
        # rounding must not leave the chosen eps a hair below its own floor
        while eps * inp.safety / top < 1.0:
            eps = math.nextafter(eps, math.inf)
    if not (0 < eps < 1):
        raise InfeasibleSchedule(f"eps = {eps:.4g} is not in (0, 1); n={inp.n} is too small")
    L = math.log(eps ** (-inp.kappa))
    tau = inp.safety * eps ** (2 * (inp.d + inp.p) + inp.kappa) / L ** (2 * inp.p - 3)
    while _cfl_ratio(tau, eps, inp) > inp.safety:
        tau = math.nextafter(tau, 0.0)
    T = L / (1.0 + inp.c_op**4)
    N = max(1, math.ceil(T / tau))
    while N * tau < T:
        N += 1
    if N > inp.max_steps:
        raise InfeasibleSchedule(f"N = {N} exceeds the step cap {inp.max_steps}")

    def headroom(bound):
        return eps * inp.safety / bound - 1.0

    report = (
        FeasibilityEntry("eps_in_unit_interval", True, 1.0 - eps),
        FeasibilityEntry("tau_cfl", True, inp.safety - _cfl_ratio(tau, eps, inp)),
        FeasibilityEntry("eps_floor_alpha1", headroom(floors["alpha1"]) >= 0, headroom(floors["alpha1"])),
        FeasibilityEntry("eps_floor_alpha2", headroom(floors["alpha2"]) >= 0, headroom(floors["alpha2"])),
        FeasibilityEntry("eps_floor_alpha3", headroom(floors["alpha3"]) >= 0, headroom(floors["alpha3"])),
        FeasibilityEntry(
            "eps_floor_lambert_w", headroom(floors["lambert_w"]) >= 0, headroom(floors["lambert_w"])
        ),
        FeasibilityEntry("step_cap", True, float(inp.max_steps - N)),
    )
    return Schedule(
        n=inp.n, kappa=inp.kappa, eps=eps, tau=tau, T=T, N=N, c_op=inp.c_op, feasibility_report=report
    )


# ---------------------------------------------------------------------------
# Time interpolants and output
# ---------------------------------------------------------------------------


def time_interpolant(traj: Trajectory, t: float, mode: str = INTERPOLATED) -> CellFunction:
    """Piecewise-linear (``"interpolated"``) or piecewise-constant (``"injected"``) state at time t."""
    if mode not in (INTERPOLATED, INJECTED):
        raise InvariantViolation(f"unknown mode {mode!r}")
    times = traj.times
    T = times[-1]
    if not (0.0 <= t <= T * (1 + 1e-14)):
        raise OutOfRange(f"t = {t} outside [0, {T}]")
    if t == 0.0:
        return traj.states[0]
    k = int(np.searchsorted(times, t, side="left"))
    k = min(max(k, 1), traj.N)
    if mode == INJECTED or t == times[k]:
        return traj.states[k]
    tau = times[k] - times[k - 1]
    a = (times[k] - t) / tau
    b = (t - times[k - 1]) / tau
    vals = a * traj.states[k - 1].values + b * traj.states[k].values
    return CellFunction(traj.states[k].partition, vals)


def write_trajectory_csv(traj: Trajectory, path, every: int = 1) -> None:
    """One row per step: k, t^k, energy, inner iterations, then the cell values."""
    ncell = len(traj.states[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "energy", "inner_iterations"] + [f"u{i}" for i in range(ncell)])
        for k, state in enumerate(traj.states):
            if k % every and k != traj.N:
                continue
            it = 0 if k == 0 else int(traj.inner_iterations[k - 1])
            row = [str(k), repr(float(traj.times[k])), repr(float(traj.energies[k])), str(it)]
            row.extend(repr(float(x)) for x in state.values)
            w.writerow(row)


def trajectory_summary(traj: Trajectory) -> dict:
    m = traj.states[0].partition.cell_measure
    final = traj.final.values
    E = traj.energies
    gap = E[:-1] - E[-1]
    mask = gap > 0
    rate = None
    if mask.sum() >= 2:
        slope = np.polyfit(traj.times[:-1][mask], np.log(gap[mask]), 1)[0]
        rate = float(-slope)
    return {
        "steps": traj.N,
        "T": float(traj.times[-1]),
        "schedule": traj.schedule.as_dict() if traj.schedule is not None else None,
        "final_norms": {
            "L1": weighted_norm(final, m, 1),
            "L2": weighted_norm(final, m, 2),
            "Linf": weighted_norm(final, m, math.inf),
        },
        "energy_initial": float(E[0]),
        "energy_final": float(E[-1]),
        "energy_decay_rate": rate,
        "inner_iterations_total": int(traj.inner_iterations.sum()),
        "inner_iterations_max": int(traj.inner_iterations.max()) if traj.N else 0,
    }


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
