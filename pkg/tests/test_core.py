import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from plapflow.core import (
    CellFunction,
    FeasibilityEntry,
    FidelityOperator,
    InvariantViolation,
    KernelMatrix,
    KernelSpec,
    NonFinite,
    Origin,
    Partition,
    PartitionMismatch,
    Schedule,
    Trajectory,
    weighted_norm,
    RANDOM_GRAPH,
)


@given(st.integers(1, 3), st.integers(1, 9), st.data())
def test_flatten_roundtrip(d, n, data):
    part = Partition(d, n)
    i = data.draw(st.integers(0, part.cell_count - 1))
    assert part.flatten(part.unflatten(i)) == i
    assert np.allclose(part.cell_center(i), part.centers()[i])


def test_partition_geometry():
    part = Partition(2, 4)
    assert part.shape == (4, 4)
    assert part.cell_count == 16
    assert part.cell_measure == 1 / 16
    # row-major: the last axis varies fastest
    assert part.unflatten(1) == (0, 1)
    assert np.allclose(part.cell_center(5), [0.375, 0.375])


@pytest.mark.parametrize("d,n", [(0, 3), (1, 0), (1.5, 3)])
def test_partition_rejects_bad_sizes(d, n):
    with pytest.raises(InvariantViolation):
        Partition(d, n)


def test_cell_function_is_read_only_and_checked():
    part = Partition(1, 4)
    cf = CellFunction(part, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        cf.values[0] = 7.0
    with pytest.raises(InvariantViolation):
        CellFunction(part, [1.0, 2.0])
    with pytest.raises(NonFinite):
        CellFunction(part, [1.0, np.nan, 0.0, 0.0])
    assert cf == CellFunction(part, np.array([1.0, 2.0, 3.0, 4.0]))
    assert cf != CellFunction(Partition(2, 2), [1.0, 2.0, 3.0, 4.0])


def test_norms_of_injection():
    part = Partition(1, 4)
    cf = CellFunction(part, [1.0, -2.0, 0.0, 2.0])
    assert cf.norm(1) == pytest.approx(5 / 4)
    assert cf.norm(2) == pytest.approx(math.sqrt(9 / 4))
    assert cf.norm(math.inf) == 2.0
    assert cf.norm(3) == pytest.approx((17 / 4) ** (1 / 3))
    assert cf.inner(CellFunction.constant(part, 1.0)) == pytest.approx(1 / 4)
    assert weighted_norm(np.array([]), 0.5, math.inf) == 0.0
    with pytest.raises(PartitionMismatch):
        cf.inner(CellFunction.zeros(Partition(1, 2)))


def test_kernel_profiles():
    r = np.array([0.0, 0.5, 1.0, 1.5, -0.1])
    assert np.array_equal(KernelSpec.indicator()(r), [1, 1, 1, 0, 0])
    assert np.allclose(KernelSpec.polynomial(2)(r), [1, 0.25, 0, 0, 0])
    tab = KernelSpec.table([0.0, 0.5], [2.0, 1.0])
    # linear between samples, last sample held up to r = 1
    assert np.allclose(tab(np.array([0.25, 0.75, 1.2])), [1.5, 1.0, 0.0])
    assert tab.sup == 2.0
    assert KernelSpec.polynomial(3).describe()["exponent"] == 3


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(shape="gauss"),
        dict(shape="polynomial", exponent=0.5),
        dict(shape="table"),
        dict(shape="table", table_r=[0.0, 0.0], table_k=[1.0, 1.0]),
        dict(shape="table", table_r=[0.0, 2.0], table_k=[1.0, 1.0]),
        dict(shape="table", table_r=[0.0, 1.0], table_k=[1.0, -1.0]),
        dict(holder_exponent=0.0),
    ],
)
def test_kernel_validation(kwargs):
    with pytest.raises(InvariantViolation):
        KernelSpec(**kwargs)


def test_kernel_matrix_invariants():
    part = Partition(1, 3)
    sym = sparse.csr_matrix(np.array([[1.0, 2.0, 0.0], [2.0, 0.0, 1.0], [0.0, 1.0, 0.0]]))
    km = KernelMatrix(part, sym)
    assert km.entry(0, 1) == 2.0
    assert np.allclose(km.row_means(), np.array([3.0, 3.0, 1.0]) / 3)
    with pytest.raises(ValueError):
        km.matrix.data[0] = 5.0
    with pytest.raises(InvariantViolation):
        KernelMatrix(part, sparse.csr_matrix(np.triu(np.ones((3, 3)))))
    with pytest.raises(InvariantViolation):
        KernelMatrix(part, sparse.csr_matrix(-np.ones((3, 3))))
    with pytest.raises(InvariantViolation):
        KernelMatrix(part, sym, Origin(RANDOM_GRAPH, 0, 0.5))
    with pytest.raises(InvariantViolation):
        KernelMatrix(Partition(1, 2), sym)


def test_fidelity_operator():
    part = Partition(1, 3)
    ident = FidelityOperator.identity()
    assert np.array_equal(ident.diag(3), np.ones(3))
    assert ident.c_op == 1.0
    diag = FidelityOperator.diagonal(CellFunction(part, [1.0, 4.0, 0.25]))
    assert diag.c_op == pytest.approx(2.0)
    assert np.allclose(diag.apply(np.ones(3)), [1.0, 4.0, 0.25])
    with pytest.raises(InvariantViolation):
        FidelityOperator.diagonal(CellFunction(part, [1.0, 0.0, 1.0]))


def test_schedule_and_trajectory_invariants():
    s = Schedule(n=8, kappa=1.0, eps=0.5, tau=0.1, T=0.35, N=4, c_op=1.0,
                 feasibility_report=(FeasibilityEntry("x", True, 0.1),))
    assert s.as_dict()["feasibility_report"][0] == {"name": "x", "satisfied": True, "margin": 0.1}
    assert s.time_mesh().sum() >= s.T
    with pytest.raises(InvariantViolation):
        Schedule(n=8, kappa=1.0, eps=0.5, tau=0.1, T=0.5, N=4, c_op=1.0)
    with pytest.raises(InvariantViolation):
        Schedule(n=8, kappa=1.0, eps=1.0, tau=0.1, T=0.1, N=4, c_op=1.0)
    with pytest.raises(InvariantViolation):
        Schedule(n=8, kappa=1.0, eps=0.5, tau=0.1, T=0.1, N=4, c_op=1.0,
                 feasibility_report=(FeasibilityEntry("x", False, math.inf),))

    part = Partition(1, 2)
    st_ = (CellFunction.zeros(part), CellFunction.constant(part, 1.0))
    tr = Trajectory(st_, [0.0, 0.1], [1.0, 0.5], [3])
    assert tr.N == 1 and tr.final == st_[1]
    assert tr.values().shape == (2, 2)
    with pytest.raises(InvariantViolation):
        Trajectory(st_, [0.0, 0.0], [1.0, 0.5], [3])
    with pytest.raises(InvariantViolation):
        Trajectory(st_, [0.0, 0.1], [1.0, 0.5], [])
    with pytest.raises(InvariantViolation):
        Trajectory(st_, [0.0, 0.1], [1.0, 0.5], [3], schedule=s)


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.sampled_from([1.0, 2.0, 3.0, math.inf]))
def test_weighted_norm_matches_numpy(vals, r):
    a = np.array(vals)
    m = 1.0 / a.size
    if math.isinf(r):
        ref = np.max(np.abs(a))
    else:
        ref = (m * np.sum(np.abs(a) ** r)) ** (1 / r)
    assert weighted_norm(a, m, r) == pytest.approx(ref, rel=1e-12, abs=1e-300)
