import numpy as np
import pytest

from plapflow import (
    CellFunction,
    FidelityOperator,
    KernelSpec,
    Partition,
    ProblemSpec,
    assemble_kernel_matrix,
)

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_problem(rng, n=None, p=None, mu=None, kernel=None, eps=None):
    """A small random problem plus its kernel matrix."""
    n = int(n or rng.integers(8, 33))
    p = float(p if p is not None else rng.choice([2.0, 2.5, 3.0, 4.0]))
    mu = float(mu if mu is not None else rng.uniform(0.05, 1.0))
    kernel = kernel or KernelSpec.indicator()
    eps = float(eps if eps is not None else rng.uniform(0.1, 0.6))
    part = Partition(1, n)
    data = CellFunction(part, rng.normal(size=n))
    init = CellFunction(part, rng.normal(size=n))
    spec = ProblemSpec(p, mu, kernel, FidelityOperator.identity(), data, init)
    return spec, assemble_kernel_matrix(kernel, eps, p, part)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
