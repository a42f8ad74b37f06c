"""Batch experiment driver.

Usage::

    plapflow solve --n-list 128 --p 3 --mu 0.1 --out runs/solve
    plapflow rates-approx --out runs/approx
    plapflow rates-operator --out runs/operator
    plapflow rates-e2e --n-list 64,128,256 --kappa 1 --safety 0.9 --out runs/e2e
    plapflow graph --seed 0-199 --out runs/graph
    plapflow denoise --signal noisy.csv --out runs/denoise

Settings come from built-in defaults, then a flat ``key = value`` config file
(``--config``), then command-line flags; the last source wins.  Each run
writes CSV tables and one ``summary.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from ._backend import BACKEND
from .core import (
    CellFunction,
    FidelityOperator,
    InvariantViolation,
    KernelSpec,
    Partition,
    PlapFlowError,
    ProblemSpec,
    weighted_norm,
)
from .discretize import (
    approximation_error,
    assemble_kernel_matrix,
    inject_points,
    load_table_kernel,
    project,
)
from .flow import (
    InnerSolverConfig,
    ScheduleInputs,
    dump_json,
    evolve,
    make_schedule,
    trajectory_summary,
    write_trajectory_csv,
)
from .graph import (
    GraphModelSpec,
    compliant_rho,
    rho_report,
    row_sum_deviation,
    sample_graph,
    theta_band,
    write_triplets,
)
from .oracle import (
    QUADRATIC,
    RatePoints,
    minimize_F_direct,
    nonlocal_consistency_error,
    rate_regression,
)

EXPERIMENTS = ("solve", "rates-approx", "rates-operator", "rates-e2e", "graph", "denoise")

_DEFAULT_N = {
    "solve": (64,),
    "rates-approx": (16, 32, 64, 128, 256, 512, 1024),
    "rates-operator": (),
    "rates-e2e": (64, 128, 256),
    "graph": (128, 256, 512),
    "denoise": (),
}


@dataclass
class RunConfig:
    experiment: str = "solve"
    out: str = "plapflow-out"
    d: int = 1
    p: float = 3.0
    mu: float = 0.1
    kappa: float = 1.0
    safety: float = 0.9
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    n_list: tuple = ()
    eps: Optional[float] = None
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    tau: Optional[float] = None
    kernel: str = "indicator"
    kernel_exponent: float = 2.0
    kernel_table: Optional[str] = None
    signal: str = "sine"
    initial: str = "data"
    margin: float = 0.1
    interior_margin: float = 0.25
    max_steps: int = 10**7
    seeds: tuple = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19)
    rho_fraction: float = 0.5
    graph_steps: int = 20
    tol: float = 1e-10
    quiet: bool = False
    threads: int = 1

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise InvariantViolation(f"unknown experiment {self.experiment!r}")
        if self.p < 2:
            raise InvariantViolation("p must be >= 2")
        if not self.mu > 0:
            raise InvariantViolation("mu must be positive")
        if self.initial not in ("zero", "data"):
            raise InvariantViolation("initial must be 'zero' or 'data'")
        if any(int(n) < 2 for n in self.n_list):
            raise InvariantViolation("every n must be >= 2")
        if not 0 < self.margin < 0.5:
            raise InvariantViolation("margin must lie in (0, 1/2)")
        if self.threads < 1:
            raise InvariantViolation("threads must be >= 1")

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        out["n_list"] = list(self.n_list)
        out["eps_list"] = list(self.eps_list)
        out["seeds"] = list(self.seeds)
        out.pop("out")
        out.pop("threads")
        return out


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _parse_int_list(text: str) -> tuple:
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _parse_float_list(text: str) -> tuple:
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InvariantViolation(f"not a boolean: {text!r}")


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return float(text)


def _optional_str(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return str(text)


_CONVERTERS: dict[str, Callable] = {
    "experiment": str,
    "out": str,
    "d": int,
    "p": float,
    "mu": float,
    "kappa": float,
    "safety": float,
    "alpha1": float,
    "alpha2": float,
    "alpha3": float,
    "n_list": _parse_int_list,
    "eps": _optional_float,
    "eps_list": _parse_float_list,
    "tau": _optional_float,
    "kernel": str,
    "kernel_exponent": float,
    "kernel_table": _optional_str,
    "signal": str,
    "initial": str,
    "margin": float,
    "interior_margin": float,
    "max_steps": int,
    "seeds": _parse_int_list,
    "seed": _parse_int_list,
    "rho_fraction": float,
    "graph_steps": int,
    "tol": float,
    "quiet": _parse_bool,
    "threads": int,
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvariantViolation(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _apply_settings(cfg: RunConfig, settings: dict) -> None:
    for key, raw in settings.items():
        if key not in _CONVERTERS:
            raise InvariantViolation(f"unknown setting {key!r}")
        value = _CONVERTERS[key](raw) if isinstance(raw, str) or raw is None else raw
        if key == "seed":
            key = "seeds"
        setattr(cfg, key, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plapflow", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"plapflow {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value settings file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", help="seed list, e.g. 0,1,2 or 0-199")
        sp.add_argument("--p", type=float)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--n-list", dest="n_list")
        sp.add_argument("--eps", help="override the scheduled length scale")
        sp.add_argument("--eps-list", dest="eps_list")
        sp.add_argument("--tau", help="override the scheduled time step")
        sp.add_argument("--safety", type=float)
        sp.add_argument("--d", type=int)
        sp.add_argument("--kernel", choices=("indicator", "polynomial", "table"))
        sp.add_argument("--kernel-table", dest="kernel_table")
        sp.add_argument("--signal", help="'sine', 'zero' or a single-column CSV path")
        sp.add_argument("--initial", choices=("zero", "data"))
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any other setting")
        sp.add_argument("--quiet", action="store_true", default=None)
    return parser


def config_from_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(experiment=args.experiment)
    cfg.n_list = _DEFAULT_N[args.experiment]
    # worker count: environment default, then config file, then --set threads=...
    if os.environ.get("PLAPFLOW_THREADS"):
        cfg.threads = int(os.environ["PLAPFLOW_THREADS"])
    if args.config:
        _apply_settings(cfg, read_config_file(args.config))
        cfg.experiment = args.experiment
    overrides = {}
    for key in ("out", "seed", "p", "mu", "kappa", "n_list", "eps", "eps_list", "tau", "safety",
                "d", "kernel", "kernel_table", "signal", "initial", "quiet"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    for item in args.set:
        if "=" not in item:
            raise InvariantViolation(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip().replace("-", "_")] = v.strip()
    _apply_settings(cfg, overrides)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Helpers shared by the experiments
# ---------------------------------------------------------------------------


def _kernel(cfg: RunConfig) -> KernelSpec:
    if cfg.kernel == "indicator":
        return KernelSpec.indicator(cfg.alpha3)
    if cfg.kernel == "polynomial":
        return KernelSpec.polynomial(cfg.kernel_exponent, cfg.alpha3)
    if cfg.kernel_table is None:
        raise InvariantViolation("table kernel needs kernel_table = PATH")
    return load_table_kernel(cfg.kernel_table, cfg.alpha3)


def sine_benchmark(x: np.ndarray) -> np.ndarray:
    """Smooth benchmark l(x) = sin(2 pi x_1) + 1.5."""
    return np.sin(2.0 * np.pi * x[:, 0]) + 1.5


def read_signal(path) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", ndmin=1, dtype=np.float64)
    if arr.ndim != 1:
        raise InvariantViolation("signal CSV must have a single column")
    return arr


def write_signal(values: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for x in values:
            fh.write(format(float(x), ".17g") + "\n")


def _signal(cfg: RunConfig, part: Partition) -> CellFunction:
    if cfg.signal == "sine":
        return project(sine_benchmark, part)
    if cfg.signal == "zero":
        return CellFunction.zeros(part)
    vals = read_signal(cfg.signal)
    return CellFunction(part, vals)


def _problem(cfg: RunConfig, part: Partition, data: CellFunction) -> ProblemSpec:
    init = data if cfg.initial == "data" else CellFunction.zeros(part)
    return ProblemSpec(cfg.p, cfg.mu, _kernel(cfg), FidelityOperator.identity(), data, init)


def _schedule(cfg: RunConfig, n: int, c_op: float = 1.0):
    inp = ScheduleInputs(
        n=n, kappa=cfg.kappa, d=cfg.d, p=cfg.p, c_op=c_op, alpha1=cfg.alpha1, alpha2=cfg.alpha2,
        alpha3=cfg.alpha3, safety=cfg.safety, max_steps=cfg.max_steps,
    )
    return make_schedule(inp, cfg.eps)


def _mesh(sched, tau_override: Optional[float]) -> np.ndarray:
    if tau_override is None:
        return sched.time_mesh()
    N = math.ceil(sched.T / tau_override)
    return np.full(N, tau_override)


def _solver(cfg: RunConfig) -> InnerSolverConfig:
    return InnerSolverConfig(tol=cfg.tol)


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _log(cfg: RunConfig, msg: str) -> None:
    if not cfg.quiet:
        print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_solve(cfg: RunConfig, out: str) -> dict:
    n = cfg.n_list[0]
    part = Partition(cfg.d, n)
    spec = _problem(cfg, part, _signal(cfg, part))
    sched = _schedule(cfg, n, spec.fidelity.c_op)
    kmat = assemble_kernel_matrix(spec.kernel, sched.eps, cfg.p, part)
    mesh = _mesh(sched, cfg.tau)
    _log(cfg, f"solve: n={n} eps={sched.eps:.4g} tau={mesh[0]:.4g} steps={mesh.size}")
    traj = evolve(spec, kmat, mesh, _solver(cfg), schedule=sched if cfg.tau is None else None)
    write_trajectory_csv(traj, os.path.join(out, "trajectory.csv"))
    summary = trajectory_summary(traj)
    summary["schedule"] = sched.as_dict()
    return summary


def run_rates_approx(cfg: RunConfig, out: str) -> dict:
    def g(x):
        return np.abs(x[:, 0] - 0.5)

    rows = []
    for n in cfg.n_list:
        err = approximation_error(g, Partition(cfg.d, n), q=2.0, quad_order=4)
        rows.append((n, err))
        _log(cfg, f"rates-approx: n={n} error={err:.4e}")
    _write_table(os.path.join(out, "rates_approx.csv"), ["n", "error"], rows)
    slope, r2 = rate_regression(RatePoints.from_pairs(rows))
    return {"field": "|x - 1/2|", "q": 2, "slope": slope, "r_squared": r2,
            "predicted_slope": -1.0, "errors": [e for _, e in rows]}


def _operator_point(args):
    kernel, eps, p, d, margin = args
    return nonlocal_consistency_error(kernel, eps, p, d, QUADRATIC, interior_margin=margin)


def run_rates_operator(cfg: RunConfig, out: str) -> dict:
    kernel = _kernel(cfg)
    items = [(kernel, eps, cfg.p, cfg.d, cfg.interior_margin) for eps in cfg.eps_list]
    errs = _pool_map(_operator_point, items, cfg.threads)
    rows = list(zip(cfg.eps_list, errs))
    for eps, err in rows:
        _log(cfg, f"rates-operator: eps={eps} error={err:.4e}")
    _write_table(os.path.join(out, "rates_operator.csv"), ["eps", "error"], rows)
    slope, r2 = rate_regression(RatePoints.from_pairs(rows))
    return {"test": QUADRATIC, "slope": slope, "r_squared": r2, "errors": errs}


def _e2e_point(args):
    cfg, n, fine_values, fine_n = args
    part = Partition(cfg.d, n)
    spec = _problem(cfg, part, _signal(cfg, part))
    sched = _schedule(cfg, n, spec.fidelity.c_op)
    kmat = assemble_kernel_matrix(spec.kernel, sched.eps, cfg.p, part)
    traj = evolve(spec, kmat, _mesh(sched, cfg.tau), _solver(cfg), schedule=sched if cfg.tau is None else None)
    fine = Partition(cfg.d, fine_n)
    centers = fine.centers()
    inside = np.all((centers > cfg.margin) & (centers < 1.0 - cfg.margin), axis=1)
    diff = inject_points(traj.final, centers[inside]) - fine_values[inside]
    err = math.sqrt(fine.cell_measure * float(np.dot(diff, diff)))
    return sched, err, int(traj.inner_iterations.sum())


def run_rates_e2e(cfg: RunConfig, out: str) -> dict:
    ns = sorted(cfg.n_list)
    fine_n = ns[-1]
    fine = Partition(cfg.d, fine_n)
    fine_spec = _problem(cfg, fine, _signal(cfg, fine))
    fine_sched = _schedule(cfg, fine_n, fine_spec.fidelity.c_op)
    fine_k = assemble_kernel_matrix(fine_spec.kernel, fine_sched.eps, cfg.p, fine)
    vstar = minimize_F_direct(fine_spec, fine_k, tol=cfg.tol)
    _log(cfg, f"rates-e2e: reference minimiser on n={fine_n}, eps={fine_sched.eps:.4g}")
    results = _pool_map(_e2e_point, [(cfg, n, vstar.values, fine_n) for n in ns], cfg.threads)
    rows = []
    for n, (sched, err, iters) in zip(ns, results):
        rows.append((n, sched.eps, sched.tau, sched.T, sched.N, err, iters))
        _log(cfg, f"rates-e2e: n={n} eps={sched.eps:.4g} N={sched.N} error={err:.4e}")
    _write_table(
        os.path.join(out, "rates_e2e.csv"),
        ["n", "eps", "tau", "T", "N", "error", "inner_iterations"],
        rows,
    )
    errs = [r[5] for r in rows]
    # the interior comparison wants eps < margin / c, with c = 1 for a unit-support kernel
    return {
        "errors": errs,
        "strictly_decreasing": all(b < a for a, b in zip(errs, errs[1:])),
        "margin": cfg.margin,
        "reference": {"n": fine_n, "eps": fine_sched.eps},
        "eps_below_margin": [sched.eps < cfg.margin for sched, _, _ in results],
        "schedules": [sched.as_dict() for sched, _, _ in results],
    }


def _graph_point(args):
    cfg, n, seed, base, rho, det_values = args
    lam = sample_graph(GraphModelSpec(base, rho, seed))
    dev = row_sum_deviation(lam, base)
    part = base.partition
    spec = _problem(cfg, part, _signal(cfg, part))
    sched = _schedule(cfg, n)
    steps = sched.time_mesh()[: cfg.graph_steps]
    traj = evolve(spec, lam, steps, _solver(cfg))
    m = part.cell_measure
    gap = max(weighted_norm(a - b, m, 2) for a, b in zip(traj.values(), det_values))
    return dev, gap


def run_graph(cfg: RunConfig, out: str) -> dict:
    if cfg.d != 1:
        raise InvariantViolation("random graph models are defined for d = 1 only")
    rows, per_n = [], []
    for n in cfg.n_list:
        part = Partition(1, n)
        spec = _problem(cfg, part, _signal(cfg, part))
        sched = _schedule(cfg, n)
        base = assemble_kernel_matrix(spec.kernel, sched.eps, cfg.p, part)
        rho = compliant_rho(base, sched.eps, cfg.p, cfg.rho_fraction)
        det = evolve(spec, base, sched.time_mesh()[: cfg.graph_steps], _solver(cfg))
        items = [(cfg, n, s, base, rho, det.values()) for s in cfg.seeds]
        res = _pool_map(_graph_point, items, cfg.threads)
        if cfg.seeds:
            first = sample_graph(GraphModelSpec(base, rho, cfg.seeds[0]))
            write_triplets(first, os.path.join(out, f"graph_n{n}_seed{cfg.seeds[0]}.csv"))
        thr = sched.eps ** (-cfg.p)
        devs = np.array([r[0] for r in res])
        gaps = np.array([r[1] for r in res])
        for s, (dev, gap) in zip(cfg.seeds, res):
            rows.append((n, s, sched.eps, rho, dev, int(dev < thr), gap))
        lo, hi = theta_band(sched.eps, n, cfg.kappa, cfg.p)
        per_n.append({
            "n": n,
            "eps": sched.eps,
            "rho": rho,
            "rho_report": [{k: (bool(v) if k == "satisfied" else v) for k, v in e.items()}
                           for e in rho_report(rho, sched.eps, cfg.p, n)],
            "deviation_threshold": thr,
            "fraction_below_threshold": float(np.mean(devs < thr)),
            "median_deviation": float(np.median(devs)),
            "median_gap": float(np.median(gaps)),
            "theta_squared_band": [lo, hi],
            "theta_estimate": float(np.median(gaps)),
        })
        _log(cfg, f"graph: n={n} rho={rho:.4g} below={per_n[-1]['fraction_below_threshold']:.3f} "
                  f"median_gap={per_n[-1]['median_gap']:.4e}")
    _write_table(
        os.path.join(out, "graph.csv"),
        ["n", "seed", "eps", "rho", "row_sum_deviation", "below_threshold", "gap_l2"],
        rows,
    )
    return {"per_n": per_n}


def run_denoise(cfg: RunConfig, out: str) -> dict:
    if cfg.signal in ("sine", "zero"):
        raise InvariantViolation("denoise needs --signal PATH to a single-column CSV")
    vals = read_signal(cfg.signal)
    n = round(vals.shape[0] ** (1.0 / cfg.d))
    if n**cfg.d != vals.shape[0]:
        raise InvariantViolation(f"signal length {vals.shape[0]} is not a perfect {cfg.d}-th power")
    part = Partition(cfg.d, n)
    data = CellFunction(part, vals)
    spec = ProblemSpec(cfg.p, cfg.mu, _kernel(cfg), FidelityOperator.identity(), data, data)
    sched = _schedule(cfg, n)
    kmat = assemble_kernel_matrix(spec.kernel, sched.eps, cfg.p, part)
    traj = evolve(spec, kmat, _mesh(sched, cfg.tau), _solver(cfg),
                  schedule=sched if cfg.tau is None else None)
    write_signal(traj.final.values, os.path.join(out, "denoised.csv"))
    summary = trajectory_summary(traj)
    summary["schedule"] = sched.as_dict()
    return summary


RUNNERS = {
    "solve": run_solve,
    "rates-approx": run_rates_approx,
    "rates-operator": run_rates_operator,
    "rates-e2e": run_rates_e2e,
    "graph": run_graph,
    "denoise": run_denoise,
}


def run(cfg: RunConfig) -> int:
    """Run one experiment; outputs appear in ``cfg.out`` only if it succeeds."""
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".partial-", dir=cfg.out)
    try:
        summary = RUNNERS[cfg.experiment](cfg, staging)
        summary = {"experiment": cfg.experiment, "config": cfg.resolved(), "backend": BACKEND,
                   "results": summary}
        dump_json(summary, os.path.join(staging, "summary.json"))
        for name in sorted(os.listdir(staging)):
            os.replace(os.path.join(staging, name), os.path.join(cfg.out, name))
    except (PlapFlowError, OSError, ValueError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "experiment": cfg.experiment}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return 0


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
    except (PlapFlowError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
