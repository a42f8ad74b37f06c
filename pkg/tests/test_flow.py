import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_problem
from plapflow.core import (
    CellFunction,
    InfeasibleSchedule,
    InvariantViolation,
    NoConvergence,
    OutOfRange,
    ProblemSpec,
)
from plapflow.flow import (
    GRADIENT_BACKTRACKING,
    InnerSolverConfig,
    ScheduleInputs,
    _cfl_ratio,
    discrete_F,
    eps_floors,
    evolve,
    exp_lambert_w,
    implicit_step,
    make_schedule,
    time_interpolant,
    trajectory_summary,
    uniform_mesh,
    write_trajectory_csv,
)
from plapflow.oracle import minimize_F_direct
from plapflow.plap import StepObjective, step_residual


def _objective(rng, tau=0.2, **kw):
    spec, km = random_problem(rng, **kw)
    return StepObjective(km, spec.p, spec.mu, tau, spec.fidelity, spec.data, spec.initial), spec, km


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
def test_implicit_step_solves_residual(p):
    rng = np.random.default_rng(int(p * 10))
    obj, _, _ = _objective(rng, p=p)
    v, iters = implicit_step(obj)
    assert np.max(np.abs(step_residual(obj, v).values)) <= 1e-10
    assert 1 <= iters <= 50


def test_gradient_method_agrees_with_newton():
    rng = np.random.default_rng(5)
    obj, _, _ = _objective(rng, p=3.0, n=12, tau=0.01, mu=0.05, eps=0.6)
    a, _ = implicit_step(obj)
    b, _ = implicit_step(obj, InnerSolverConfig(method=GRADIENT_BACKTRACKING, max_iter=100000))
    assert np.allclose(a.values, b.values, atol=1e-9)


def test_no_convergence_carries_diagnostics():
    rng = np.random.default_rng(6)
    spec, km = random_problem(rng, p=4.0, mu=1.0)
    with pytest.raises(NoConvergence) as info:
        evolve(spec, km, [0.5, 0.5], InnerSolverConfig(tol=1e-14, max_iter=1))
    assert info.value.step == 1
    assert info.value.iterations == 1
    assert info.value.final_residual > 1e-14


def test_solver_config_validation():
    with pytest.raises(InvariantViolation):
        InnerSolverConfig(tol=0.0)
    with pytest.raises(InvariantViolation):
        InnerSolverConfig(method="bfgs")


def test_evolve_shapes_and_steady_state():
    rng = np.random.default_rng(8)
    spec, km = random_problem(rng, n=16, p=3.0, mu=0.5)
    mesh = uniform_mesh(30.0, 60)
    traj = evolve(spec, km, mesh)
    assert traj.N == 60
    assert traj.times[-1] == pytest.approx(30.0)
    assert traj.inner_iterations.shape == (60,)
    assert np.all(np.diff(traj.energies) <= 1e-12)
    # after a long horizon the flow sits at the minimiser of the functional
    vstar = minimize_F_direct(spec, km)
    assert np.max(np.abs(traj.final.values - vstar.values)) < 1e-8
    with pytest.raises(InvariantViolation):
        evolve(spec, km, [0.1, -0.1])


def test_discrete_F_for_identity():
    rng = np.random.default_rng(9)
    spec, km = random_problem(rng, n=10, mu=0.3)
    v = rng.normal(size=10)
    from plapflow.plap import nonlocal_energy

    expected = 0.3 * nonlocal_energy(km, v, spec.p) + 0.5 * km.partition.cell_measure * np.sum((v - spec.data.values) ** 2)
    assert discrete_F(spec, km, v) == pytest.approx(expected, rel=1e-14)


def test_time_interpolant():
    rng = np.random.default_rng(10)
    spec, km = random_problem(rng, n=6)
    traj = evolve(spec, km, [0.1, 0.3])
    assert time_interpolant(traj, 0.0) == traj.states[0]
    assert time_interpolant(traj, 0.1) == traj.states[1]
    mid = time_interpolant(traj, 0.25)
    assert np.allclose(mid.values, 0.5 * (traj.states[1].values + traj.states[2].values))
    assert time_interpolant(traj, 0.25, mode="injected") == traj.states[2]
    with pytest.raises(OutOfRange):
        time_interpolant(traj, 0.5)
    with pytest.raises(InvariantViolation):
        time_interpolant(traj, 0.2, mode="cubic")


def test_schedule_reference_values():
    s = make_schedule(ScheduleInputs(n=256, kappa=1.0, d=1, p=3.0, safety=0.9))
    # eps = n^(-1/6) / 0.9 for these exponents
    assert s.eps == pytest.approx(256 ** (-1 / 6) / 0.9, rel=1e-15)
    L = math.log(1 / s.eps)
    assert s.tau == pytest.approx(0.9 * s.eps**9 / L**3, rel=1e-12)
    assert s.T == pytest.approx(L / 2, rel=1e-15)
    assert s.N == math.ceil(s.T / s.tau) == 397
    names = [e.name for e in s.feasibility_report]
    assert names == ["eps_in_unit_interval", "tau_cfl", "eps_floor_alpha1", "eps_floor_alpha2",
                     "eps_floor_alpha3", "eps_floor_lambert_w", "step_cap"]


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(16, 10**6),
    kappa=st.floats(0.5, 6.0),
    p=st.floats(2.0, 4.0),
    safety=st.floats(0.3, 1.0),
    d=st.integers(1, 2),
)
def test_schedule_invariants(n, kappa, p, safety, d):
    inp = ScheduleInputs(n=n, kappa=kappa, d=d, p=p, safety=safety, max_steps=10**12)
    try:
        s = make_schedule(inp)
    except InfeasibleSchedule:
        floors = eps_floors(inp)
        assert max(floors["alpha1"], floors["alpha2"], floors["alpha3"]) / safety >= 1.0
        return
    assert 0 < s.eps < 1
    assert s.N * s.tau >= s.T
    assert _cfl_ratio(s.tau, s.eps, inp) <= safety
    assert all(math.isfinite(e.margin) for e in s.feasibility_report)
    for name in ("eps_floor_alpha1", "eps_floor_alpha2", "eps_floor_alpha3"):
        entry = next(e for e in s.feasibility_report if e.name == name)
        assert entry.satisfied


def test_schedule_errors():
    with pytest.raises(InfeasibleSchedule):
        make_schedule(ScheduleInputs(n=4, kappa=1.0, d=1, p=3.0, safety=0.5))
    with pytest.raises(InfeasibleSchedule):
        make_schedule(ScheduleInputs(n=256, kappa=1.0, d=1, p=3.0, safety=0.9, max_steps=10))
    with pytest.raises(InvariantViolation):
        ScheduleInputs(n=256, kappa=1.0, d=1, p=3.0, safety=1.5)
    s = make_schedule(ScheduleInputs(n=64, kappa=1.0, d=1, p=3.0), eps_override=0.8)
    assert s.eps == 0.8


@pytest.mark.parametrize("y", [0.5, 1.0, math.e, 10.0, 1e6])
def test_exp_lambert_w(y):
    z = exp_lambert_w(y)
    assert z * math.log(z) == pytest.approx(y, rel=1e-12)
    assert exp_lambert_w(0.0) == 1.0


def test_trajectory_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    spec, km = random_problem(rng, n=5)
    traj = evolve(spec, km, [0.1, 0.2, 0.3])
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["k", "t", "energy", "inner_iterations"]
    assert len(rows) == 5
    back = np.array([[float(x) for x in r[4:]] for r in rows[1:]])
    assert np.array_equal(back, traj.values())  # repr round-trips exactly
    summary = trajectory_summary(traj)
    assert summary["steps"] == 3
    assert summary["energy_final"] <= summary["energy_initial"]
