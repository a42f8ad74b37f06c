"""The compiled kernels and the NumPy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_problem
from plapflow import _pykernels as py
from plapflow.plap import _csr, _pattern

ck = pytest.importorskip("plapflow._ckernels")

P_VALUES = st.sampled_from([2.0, 2.5, 3.0, 3.7, 4.0, 6.0])


def _instance(seed, p):
    rng = np.random.default_rng(seed)
    _, km = random_problem(rng, p=p)
    v = rng.normal(size=km.partition.cell_count)
    return km, v


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), P_VALUES)
def test_apply_energy_weights_agree(seed, p):
    km, v = _instance(seed, p)
    ip, ix, d = _csr(km)
    m = km.partition.cell_measure
    assert np.allclose(ck.plap_apply(ip, ix, d, v, m, p), py.plap_apply(ip, ix, d, v, m, p), rtol=1e-13, atol=1e-13)
    assert ck.plap_energy(ip, ix, d, v, m, p) == pytest.approx(py.plap_energy(ip, ix, d, v, m, p), rel=1e-13)
    assert np.allclose(ck.plap_jacobian_weights(ip, ix, d, v, m, p), py.plap_jacobian_weights(ip, ix, d, v, m, p),
                       rtol=1e-13, atol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), P_VALUES)
def test_step_hessian_agrees(seed, p):
    km, v = _instance(seed, p)
    ip, ix, d, dp = _pattern(km)
    m = km.partition.cell_measure
    base = 1.0 + np.linspace(0.1, 0.5, v.size)
    a = ck.step_hessian_data(ip, ix, d, dp, v, m, p, 0.3, base)
    b = py.step_hessian_data(ip, ix, d, dp, v, m, p, 0.3, base)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-14)


@given(st.integers(0, 2**64 - 1), st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 10**6)), min_size=1, max_size=30))
def test_pair_uniforms_bitwise(seed, pairs):
    i = np.array([a for a, _ in pairs], dtype=np.int64)
    j = np.array([b for _, b in pairs], dtype=np.int64)
    assert np.array_equal(ck.pair_uniforms(seed, i, j), py.pair_uniforms(seed, i, j))


def test_environment_switch_selects_fallback():
    code = "import plapflow; print(plapflow.BACKEND)"
    env = dict(os.environ, PLAPFLOW_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env["PLAPFLOW_PURE"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"


def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--n", "64", "--eps", "0.3", "--repeat", "1"])
    out = capsys.readouterr().out
    assert "plap_apply" in out and "evolve" in out
