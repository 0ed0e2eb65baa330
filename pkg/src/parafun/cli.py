"""Command-line experiment runner.

``parafun run <experiment> [--key value ...]`` reproduces one experiment
setup and writes ``errors.csv``, ``config.resolved.txt``, ``plot.gp`` and
(unless ``--no-figure``) ``figure.png`` to the output directory.

Exit status: 0 on success, 2 on a configuration error, 3 on a numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import control, steady
from .errors import MatrixMarketError, NumericalError, ParafunError
from .flows import TimeGrid
from .matfun import MatFunRequest, evaluate
from .mmio import read_matrix, write_matrix
from .plotting import gnuplot_script, render_png
from .reference import (ProblemSpec, approx_inverse, generate, laplacian_1d, reference_cos_sin,
                        reference_exp, reference_inverse)

__all__ = ["ExperimentConfig", "ConfigError", "run_experiment", "main", "read_matrix",
           "write_matrix", "EXPERIMENTS"]

PARAREAL_EXPERIMENTS = ("fig_inverse", "fig_exp", "fig_cos", "custom")
ACCEL_EXPERIMENTS = ("acc_grad", "acc_sd", "acc_inv_approx", "acc_inv_exact")
EXPERIMENTS = ("fig_inverse", "fig_exp", "fig_cos") + ACCEL_EXPERIMENTS + ("control_demo", "custom")

HEADERS = {
    "parareal": ["iteration", "error_vs_fine", "error_vs_exact"],
    "acceleration": ["step", "time", "residual_plain", "residual_accel", "ratio"],
    "control": ["outer_iter", "cost", "terminal_residual", "max_jump"],
}

# defaults per experiment; None means "derived from other parameters"
DEFAULTS = {
    "fig_inverse": dict(n=80, N=25, J=200, scheme="euler", method="classical", scale_pow=10,
                        function="inverse", k_max=None, tol=1e-12),
    "fig_exp": dict(n=80, N=25, J=200, scheme="cn", method="classical", scale_pow=10,
                    function="exponential", k_max=None, tol=1e-12),
    "fig_cos": dict(n=80, N=10, J=100, scheme="euler", method="modified", scale_pow=0,
                    function="cosine", k_max=None, tol=1e-12),
    "custom": dict(N=10, J=100, scheme="euler", method="classical", scale_pow=0,
                   function="inverse", k_max=None, tol=1e-12),
    "acc_grad": dict(n=127, dt=None, k_max=None, cutoff="on"),
    "acc_sd": dict(n=127, k_max=2000, cutoff="on"),
    "acc_inv_approx": dict(n=63, dt=0.1, k_max=100, cutoff="on"),
    "acc_inv_exact": dict(n=63, dt=0.1, k_max=100, cutoff="on"),
    "control_demo": dict(n=16, N=4, J=25, scheme="euler", k_max=200, tol=0.0, alpha=1000.0,
                         epsilon=0.1, rho=1.0),
}

_MAX_ROWS = 2048


class ConfigError(ParafunError, ValueError):
    """Invalid experiment configuration (exit status 2)."""


@dataclass
class ExperimentConfig:
    experiment: str
    n: Optional[int] = None
    N: Optional[int] = None
    J: Optional[int] = None
    dt: Optional[float] = None
    scale_pow: Optional[int] = None
    scheme: Optional[str] = None
    method: Optional[str] = None
    k_max: Optional[int] = None
    tol: Optional[float] = None
    workers: Optional[int] = None
    matrix: Optional[str] = None
    function: Optional[str] = None
    cutoff: Optional[str] = None
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    rho: Optional[float] = None
    out: Optional[str] = None
    figure: bool = True


def _fail(msg):
    raise ConfigError(msg)


def resolve(cfg: ExperimentConfig) -> dict:
    """Merge overrides into the experiment defaults and validate them."""
    if cfg.experiment not in EXPERIMENTS:
        _fail(f"unknown experiment {cfg.experiment!r}; valid names: {', '.join(EXPERIMENTS)}")
    base = dict(DEFAULTS[cfg.experiment])
    for f in fields(cfg):
        if f.name in ("experiment", "out", "figure", "workers", "matrix"):
            continue
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if f.name not in base:
            _fail(f"--{f.name.replace('_', '-')} does not apply to {cfg.experiment}")
        base[f.name] = value
    exp = cfg.experiment
    if cfg.matrix is not None and exp != "custom":
        _fail("--matrix only applies to the custom experiment")
    if exp == "custom" and cfg.matrix is None:
        _fail("the custom experiment needs --matrix PATH")
    if cfg.workers is not None and cfg.workers < 1:
        _fail("--workers must be at least 1")

    for key in ("n", "N", "J", "k_max"):
        if base.get(key) is not None and base[key] < 1:
            _fail(f"--{key.replace('_', '-')} must be positive")
    if base.get("n") is not None and base["n"] < 2:
        _fail("--n must be at least 2")
    if base.get("scale_pow") is not None and base["scale_pow"] < 0:
        _fail("--scale-pow must be non-negative")
    for key in ("dt", "alpha", "epsilon", "rho"):
        if base.get(key) is not None and not base[key] > 0:
            _fail(f"--{key} must be positive")
    if base.get("tol") is not None and base["tol"] < 0:
        _fail("--tol must be non-negative")
    if base.get("cutoff") not in (None, "on", "off"):
        _fail("--cutoff must be 'on' or 'off'")

    if exp in PARAREAL_EXPERIMENTS:
        if base["function"] not in ("inverse", "exponential", "cosine", "sine"):
            _fail("--function must be inverse, exponential, cosine or sine")
        if base["function"] == "inverse":
            if base["method"] == "modified":
                _fail("the inverse flow is nonlinear; use --method classical or sequential")
            if base["scheme"] == "cn":
                _fail("Crank-Nicolson needs a linear flow; the inverse flow needs --scheme euler")
    if exp == "acc_grad" and base["dt"] is None:
        h = 1.0 / (base["n"] + 1)
        base["dt"] = h * h / 4.0
    if exp == "acc_grad" and base["k_max"] is None:
        base["k_max"] = int(round(2.0 / base["dt"]))
    base["workers"] = cfg.workers if cfg.workers is not None else 1
    if cfg.matrix is not None:
        base["matrix"] = cfg.matrix
    return base


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _load_matrix(path):
    if not Path(path).is_file():
        _fail(f"matrix file not found: {path}")
    try:
        a = read_matrix(path)
    except MatrixMarketError as exc:
        _fail(f"{path}: {exc}")
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        _fail(f"{path}: matrix must be square, got {a.shape}")
    return a


def _exact(function, a):
    if function == "inverse":
        return reference_inverse(a)
    if function == "exponential":
        return reference_exp(a)
    c, s = reference_cos_sin(a)
    return c if function == "cosine" else s


def _parareal(exp, p, matrix):
    if exp == "custom":
        a = matrix
        solver_pow = p["scale_pow"]
    else:
        a = generate(ProblemSpec("laplacian_1d", p["n"], "mesh"))
        solver_pow = p["scale_pow"]
        if exp == "fig_exp":
            # the flow matrix is -A / 2^m; integrate to t=1 without extra scaling
            a = -np.ldexp(a, -p["scale_pow"])
            solver_pow = 0
    req = MatFunRequest(function=p["function"], method=p["method"],
                        grid=TimeGrid(0.0, 1.0, p["N"], p["J"]), fine_scheme=p["scheme"],
                        scale_pow=solver_pow, k_max=p["k_max"], stop_tol=p["tol"],
                        workers=p["workers"], track_fine=True, reference=_exact(p["function"], a))
    report = evaluate(a, req)
    run = report.run
    rows = []
    for k in range(len(run.iterates)):
        fine = run.errors_vs_fine[k] if k < len(run.errors_vs_fine) else None
        exact = report.errors_vs_exact[k] if k < len(report.errors_vs_exact) else None
        rows.append([k, fine, exact])
    summary = {
        "iterations": run.n_iterations,
        "converged": run.converged,
        "final_error_vs_fine": run.errors_vs_fine[-1] if run.errors_vs_fine else None,
        "final_error_vs_exact": report.error_vs_reference,
    }
    if report.residual is not None:
        summary["residual_inf"] = report.residual
    if run.subspace_dims:
        summary["subspace_dims"] = " ".join(str(d) for d in run.subspace_dims)
    return "parareal", rows, summary


def _acceleration(exp, p):
    cutoff = p["cutoff"] == "on"
    if exp in ("acc_grad", "acc_sd"):
        n = p["n"]
        a = generate(ProblemSpec("laplacian_1d", n, "mesh"))
        b = np.ones((n, 1))
        x0 = np.zeros((n, 1))
        x_tilde = approx_inverse(a, "ilu0_solve", rhs=b)
        if exp == "acc_grad":
            every = max(1, p["k_max"] // _MAX_ROWS)
            _, hist = steady.simple_gradient_accelerated(a, b, x0, x_tilde, p["dt"], p["k_max"],
                                                         cutoff=cutoff, record_every=every)
        else:
            _, hist = steady.steepest_descent_accelerated(a, b, x0, x_tilde, p["k_max"],
                                                          cutoff=cutoff)
    else:
        a = generate(ProblemSpec("laplacian_2d", p["n"], "frobenius"))
        size = a.shape[0]
        if exp == "acc_inv_exact":
            x_tilde = reference_inverse(a)
        else:
            x_tilde = approx_inverse(a, "threshold", level=0.01)
        every = max(1, p["k_max"] // _MAX_ROWS)
        _, hist = steady.inverse_accelerated(sp.csr_matrix(a), np.zeros((size, size)), x_tilde,
                                             p["dt"], p["k_max"], cutoff=cutoff, record_every=every)
    rows = [[s, t, rp, ra, r] for s, t, rp, ra, r in
            zip(hist.steps, hist.times, hist.residual_plain, hist.residual_accel, hist.ratio)]
    summary = {"final_ratio": hist.ratio[-1], "min_ratio": min(hist.ratio),
               "final_time": hist.times[-1]}
    return "acceleration", rows, summary


def _control(p):
    n = p["n"]
    a = laplacian_1d(n)
    prob = control.ControlProblem(a, np.eye(n), np.eye(n), TimeGrid(0.0, 1.0, p["N"], p["J"]),
                                  alpha=p["alpha"], epsilon=p["epsilon"], rho=p["rho"],
                                  scheme=p["scheme"], workers=p["workers"])
    baseline = control.uncontrolled_terminal_residual(prob)
    _, diag = control.solve_steady_control(prob, m_max=p["k_max"], tol=p["tol"])
    rows = [[k, c, r, j] for k, (c, r, j) in enumerate(diag["history"])]
    summary = {"iterations": diag["iterations"], "uncontrolled_residual": baseline,
               "terminal_residual": diag["terminal_residual"], "max_jump": diag["max_jump"]}
    return "control", rows, summary


def run_experiment(cfg: ExperimentConfig, stream=None) -> dict:
    """Run one experiment and write its artifacts.

    Raises :class:`ConfigError` before any computation or file output for
    invalid settings; numerical failures propagate as :class:`NumericalError`.
    Returns a dict with the layout, rows, summary and output directory.
    """
    stream = stream or sys.stdout
    p = resolve(cfg)
    exp = cfg.experiment
    matrix = _load_matrix(cfg.matrix) if exp == "custom" else None
    out = Path(cfg.out or os.environ.get("PARAFUN_OUT") or Path("parafun_out") / exp)
    if out.exists() and not out.is_dir():
        _fail(f"output path {out} exists and is not a directory")

    t0 = time.perf_counter()
    if exp in PARAREAL_EXPERIMENTS:
        layout, rows, summary = _parareal(exp, p, matrix)
    elif exp in ACCEL_EXPERIMENTS:
        layout, rows, summary = _acceleration(exp, p)
    else:
        layout, rows, summary = _control(p)
    elapsed = time.perf_counter() - t0

    header = HEADERS[layout]
    out.mkdir(parents=True, exist_ok=True)
    csv_lines = [",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]
    (out / "errors.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    resolved = [f"experiment = {exp}"] + [f"{k} = {_fmt_cfg(v)}" for k, v in sorted(p.items())]
    resolved += [f"result.{k} = {_fmt_cfg(v)}" for k, v in summary.items()]
    (out / "config.resolved.txt").write_text("\n".join(resolved) + "\n", encoding="utf-8")
    title = f"parafun {exp}"
    (out / "plot.gp").write_text(gnuplot_script(layout, header, title), encoding="utf-8")
    figure = None
    if cfg.figure and render_png(out / "figure.png", layout, header, rows, title):
        figure = out / "figure.png"

    print(f"experiment: {exp}", file=stream)
    for k, v in summary.items():
        print(f"  {k}: {_fmt_cfg(v)}", file=stream)
    print(f"  wall_time_s: {elapsed:.3f}", file=stream)
    print(f"  output: {out}", file=stream)
    return {"layout": layout, "rows": rows, "summary": summary, "out": out, "figure": figure}


def _fmt_cfg(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parafun",
                                     description="Parareal matrix-function experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment", choices=EXPERIMENTS, metavar="experiment",
                     help="one of: " + ", ".join(EXPERIMENTS))
    run.add_argument("--n", type=int, help="matrix size parameter")
    run.add_argument("--N", type=int, help="number of coarse intervals")
    run.add_argument("--J", type=int, help="fine steps per coarse interval")
    run.add_argument("--dt", type=float, help="time step (acceleration experiments)")
    run.add_argument("--scale-pow", type=int, help="power-of-two scaling exponent")
    run.add_argument("--scheme", choices=("euler", "cn"))
    run.add_argument("--method", choices=("classical", "modified", "sequential"))
    run.add_argument("--function", choices=("inverse", "exponential", "cosine", "sine"))
    run.add_argument("--matrix", help="Matrix Market file (custom experiment)")
    run.add_argument("--k-max", type=int, help="iteration cap")
    run.add_argument("--tol", type=float, help="stopping tolerance")
    run.add_argument("--cutoff", choices=("on", "off"),
                     help="switch the accelerator off after t = 1")
    run.add_argument("--alpha", type=float, help="terminal residual weight (control)")
    run.add_argument("--epsilon", type=float, help="jump penalty parameter (control)")
    run.add_argument("--rho", type=float, help="initial descent step (control)")
    run.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    run.add_argument("--out", help="output directory (default: $PARAFUN_OUT or parafun_out/<experiment>)")
    run.add_argument("--no-figure", action="store_true", help="skip the matplotlib PNG")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = ExperimentConfig(
        experiment=args.experiment, n=args.n, N=args.N, J=args.J, dt=args.dt,
        scale_pow=args.scale_pow, scheme=args.scheme, method=args.method, k_max=args.k_max,
        tol=args.tol, workers=args.workers, matrix=args.matrix, function=args.function,
        cutoff=args.cutoff, alpha=args.alpha, epsilon=args.epsilon, rho=args.rho,
        out=args.out, figure=not args.no_figure)
    try:
        run_experiment(cfg)
    except ConfigError as exc:
        print(f"parafun: error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ArithmeticError) as exc:
        print(f"parafun: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ParafunError as exc:
        print(f"parafun: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
