"""Compare the compiled kernels against the NumPy fallback.

Run with ``python benchmarks/bench_kernels.py [--n 2048] [--repeat 5]``.
Prints the best-of-``repeat`` wall time per call for each backend and the
speed-up of the compiled one.
"""

import argparse
import timeit

import numpy as np

from plapflow import (
    CellFunction,
    FidelityOperator,
    KernelSpec,
    Partition,
    ProblemSpec,
    assemble_kernel_matrix,
    evolve,
)
from plapflow import _pykernels, plap
from plapflow.plap import _csr, _pattern

try:
    from plapflow import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return

    part = Partition(1, args.n)
    km = assemble_kernel_matrix(KernelSpec.indicator(), args.eps, args.p, part)
    ip, ix, d = _csr(km)
    pip, pix, pd, dp = _pattern(km)
    m = part.cell_measure
    rng = np.random.default_rng(0)
    v = rng.normal(size=args.n)
    base = np.full(args.n, 1.01)
    iu, ju = np.triu_indices(min(args.n, 2048), k=1)
    p = args.p

    cases = {
        "plap_apply": lambda k: k.plap_apply(ip, ix, d, v, m, p),
        "plap_energy": lambda k: k.plap_energy(ip, ix, d, v, m, p),
        "step_hessian_data": lambda k: k.step_hessian_data(pip, pix, pd, dp, v, m, p, 0.01, base),
        "pair_uniforms": lambda k: k.pair_uniforms(7, iu, ju),
    }
    print(f"n = {args.n}, eps = {args.eps}, p = {p}, nnz = {km.nnz}")
    print(f"{'kernel':<20}{'cython [ms]':>14}{'python [ms]':>14}{'speed-up':>10}")
    for name, fn in cases.items():
        tc = _best(lambda: fn(_ckernels), args.repeat, 5)
        tp = _best(lambda: fn(_pykernels), args.repeat, 5)
        print(f"{name:<20}{tc * 1e3:>14.3f}{tp * 1e3:>14.3f}{tp / tc:>10.1f}")

    # whole backward-Euler run, swapping the kernel module used by the solver
    spec = ProblemSpec(p, 0.1, KernelSpec.indicator(), FidelityOperator.identity(),
                       CellFunction(part, np.sin(6 * part.centers()[:, 0])), CellFunction.zeros(part))
    mesh = np.full(20, 1e-3)
    times = {}
    saved = plap.kernels
    try:
        for label, mod in (("cython", _ckernels), ("python", _pykernels)):
            plap.kernels = mod
            times[label] = _best(lambda: evolve(spec, km, mesh), max(1, args.repeat // 2), 1)
    finally:
        plap.kernels = saved
    print(f"{'evolve (20 steps)':<20}{times['cython'] * 1e3:>14.1f}{times['python'] * 1e3:>14.1f}"
          f"{times['python'] / times['cython']:>10.1f}")


if __name__ == "__main__":
    main()
