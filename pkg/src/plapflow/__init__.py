"""Nonlocal p-Laplacian gradient flows on uniform partitions and random graphs."""

from ._backend import BACKEND
from .core import (
    CellFunction,
    FidelityOperator,
    KernelMatrix,
    KernelSpec,
    Partition,
    PlapFlowError,
    ProblemSpec,
    Schedule,
    Trajectory,
)
from .discretize import (
    ScalarField,
    approximation_error,
    assemble_kernel_matrix,
    compute_cpd,
    inject,
    project,
)
from .flow import (
    InnerSolverConfig,
    ScheduleInputs,
    discrete_F,
    evolve,
    implicit_step,
    make_schedule,
    time_interpolant,
)
from .graph import GraphModelSpec, evolve_graph, row_sum_deviation, sample_graph
from .oracle import (
    RatePoints,
    brute_force_plap,
    local_plap_closed_form,
    minimize_F_direct,
    nonlocal_consistency_error,
    rate_regression,
)
from .plap import StepObjective, apply_plap, nonlocal_energy, step_objective_value, step_residual

__version__ = "0.1.0"
