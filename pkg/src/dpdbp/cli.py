"""Command-line interface.

    dpdbp <command> --config <path> [--out <dir>] [--threads <k>] [--seed <n>]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .breakdown import (
    SCHEMA_LINE,
    BoundProblem,
    BoundRow,
    abp_lower_bound,
    compute_L0,
    empirical_breakdown_point,
    level_curve_L0,
    overlap_schedule,
    poisson_bound_sweep,
    write_bound_csv,
)
from .config import (
    COMMANDS,
    build_contamination,
    build_model,
    build_monte_carlo,
    build_optimizer,
    build_theta,
    check_grid,
    float_list,
    get,
    load_config,
)
from .divergence import Exponential, Normal, Poisson
from .errors import ConfigError, DpdError, NumericalError
from .estimation import mdpde_fit
from .functional import contaminant_parameter, mdpdf_sweep
from .plots import band_plots, bound_grid_plots, bound_plot, sweep_plots
from .simulation import SimulationPlan, run_simulation

log = logging.getLogger("dpdbp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _ylim(cfg):
    clip = get(cfg, "output.ylim", {}) or {}
    if not isinstance(clip, dict):
        raise ConfigError("output.ylim", "must map coordinate names to [low, high]")
    return {k: tuple(float(v) for v in lim) for k, lim in clip.items()}


def _base_seed(cfg, args):
    return args.seed if args.seed is not None else get(cfg, "seed", kind=int)


def _write_breakdown(path, alpha_grid, curves, theta0, theta_c, eps_max):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMA_LINE + "\n")
        w = csv.writer(fh)
        w.writerow(["alpha", "breakdown_eps", "ambiguous", "candidates"])
        for a, (eps, thetas) in zip(alpha_grid, curves):
            bp = empirical_breakdown_point(eps, thetas, theta0, theta_c, eps_max=eps_max)
            w.writerow(
                [
                    repr(float(a)),
                    "" if bp.value is None else repr(bp.value),
                    str(bp.ambiguous).lower(),
                    ";".join(repr(c) for c in bp.candidates),
                ]
            )


def cmd_fit(cfg, args, out):
    model, y = build_model(cfg)
    if y is None:
        raise ConfigError("model.design.path", "fit needs a design file with a 'y' column")
    try:
        y = model.check_response(y)
    except DpdError as exc:
        raise ConfigError("model.design.path", str(exc)) from None
    alpha = get(cfg, "alpha", kind=float)
    if not alpha >= 0:
        raise ConfigError("alpha", "must be >= 0")
    init = build_theta(cfg, model, "init") if get(cfg, "init", None) is not None else None
    seed = args.seed if args.seed is not None else get(cfg, "seed", 0, kind=int)
    opt = build_optimizer(cfg, seed=seed)
    fit = mdpde_fit(model, y, alpha, opt, init=init)
    summary = {
        "alpha": alpha,
        "param_names": list(model.param_names),
        "theta_hat": [float(v) for v in fit.theta_hat],
        "objective": fit.objective,
        "ee_residual_norm": fit.ee_residual_norm,
        "converged": fit.converged,
        "n_restarts_used": fit.n_restarts_used,
        "iterations": fit.iterations,
    }
    path = out / get(cfg, "output.file", "fit.json", kind=str)
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %s", path)
    return [path]


def cmd_mdpdf_sweep(cfg, args, out):
    model, _ = build_model(cfg)
    theta0 = build_theta(cfg, model)
    cont = build_contamination(cfg, model)
    alphas = check_grid(float_list(cfg, "grid.alpha"), "grid.alpha", 0.0, np.inf)
    eps = check_grid(float_list(cfg, "grid.eps"), "grid.eps", 0.0, 1.0, hi_open=True)
    opt = build_optimizer(cfg, n_starts=1, method="gradient")
    mc = build_monte_carlo(cfg)
    table = mdpdf_sweep(model, theta0, cont, alphas, eps, opt, mc, _base_seed(cfg, args), args.threads)
    prefix = get(cfg, "output.prefix", "sweep", kind=str)
    csv_path = out / f"{prefix}.csv"
    table.to_csv(csv_path)
    paths = [csv_path]
    paths += sweep_plots(csv_path, out, model.param_names, prefix, _ylim(cfg))
    theta_c = contaminant_parameter(model, cont)
    bp_path = out / f"{prefix}_breakdown.csv"
    _write_breakdown(
        bp_path,
        table.alpha_grid,
        [table.row(a) for a in table.alpha_grid],
        theta0,
        theta_c,
        get(cfg, "breakdown.eps_max", 0.5, kind=float),
    )
    paths.append(bp_path)
    return paths


def cmd_abp_bound(cfg, args, out):
    C = get(cfg, "bound.C", 1.0, kind=float)
    mode = get(cfg, "bound.mode", "model", kind=str)
    alphas = check_grid(float_list(cfg, "grid.alpha"), "grid.alpha", 0.0, 1.0)
    if np.any(alphas <= 0):
        raise ConfigError("grid.alpha", "bounds need alpha > 0")
    prefix = get(cfg, "output.prefix", "bound", kind=str)
    csv_path = out / f"{prefix}.csv"
    try:
        if mode == "model":
            model, _ = build_model(cfg)
            theta0 = build_theta(cfg, model)
            mc = build_monte_carlo(cfg) if get(cfg, "monte_carlo", None) is not None else None
            if model.discrete:
                rows = poisson_bound_sweep(model, theta0, alphas, mc, C)
            else:
                rows = []
                for a in alphas:
                    L0 = compute_L0(model, theta0, float(a))
                    rows.append(BoundRow(float(a), L0, abp_lower_bound(BoundProblem(C, L0, float(a)))))
            write_bound_csv(csv_path, rows)
            return [csv_path, bound_plot(csv_path, out / f"{prefix}.svg")]
        if mode == "L0-grid":
            L0s = check_grid(float_list(cfg, "bound.L0_grid"), "bound.L0_grid", 0.0, np.inf)
            if np.any(L0s <= 0):
                raise ConfigError("bound.L0_grid", "L0 values must be > 0")
            level = get(cfg, "bound.level", None, kind=float)
            with csv_path.open("w", newline="", encoding="utf-8") as fh:
                fh.write(SCHEMA_LINE + "\n")
                w = csv.writer(fh)
                w.writerow(["kind", "alpha", "L0", "bound"])
                for L0 in L0s:
                    for a in alphas:
                        b = abp_lower_bound(BoundProblem(C, float(L0), float(a)))
                        w.writerow(["grid", repr(float(a)), repr(float(L0)), repr(b)])
                if level is not None:
                    for a, L0 in zip(alphas, level_curve_L0(alphas, level, C)):
                        w.writerow(["level", repr(float(a)), repr(float(L0)), repr(level)])
            return [csv_path] + bound_grid_plots(csv_path, out, prefix)
    except DpdError as exc:
        if isinstance(exc, (ConfigError, NumericalError)):
            raise
        raise ConfigError("bound", str(exc)) from None
    raise ConfigError("bound.mode", f"unknown mode {mode!r}; use 'model' or 'L0-grid'")


def cmd_simulate(cfg, args, out):
    model, _ = build_model(cfg)
    theta0 = build_theta(cfg, model)
    cont = build_contamination(cfg, model)
    alphas = check_grid(float_list(cfg, "grid.alpha"), "grid.alpha", 0.0, 1.0)
    eps = check_grid(float_list(cfg, "grid.eps"), "grid.eps", 0.0, 1.0, hi_open=True)
    n_reps = get(cfg, "simulation.n_reps", kind=int)
    if n_reps < 1:
        raise ConfigError("simulation.n_reps", "must be >= 1")
    opt = build_optimizer(cfg, n_starts=3, method="gradient")
    plan = SimulationPlan(
        model,
        theta0,
        cont,
        tuple(alphas),
        tuple(eps),
        n_reps,
        _base_seed(cfg, args),
        opt,
        bool(get(cfg, "simulation.fixed_count", False)),
    )
    summary = run_simulation(plan, threads=args.threads)
    prefix = get(cfg, "output.prefix", "simulation", kind=str)
    csv_path = out / f"{prefix}.csv"
    summary.to_csv(csv_path)
    paths = [csv_path] + band_plots(csv_path, out, prefix, _ylim(cfg))
    bp_path = out / f"{prefix}_breakdown.csv"
    _write_breakdown(
        bp_path,
        summary.alpha_grid,
        [summary.median_curve(a) for a in summary.alpha_grid],
        theta0,
        contaminant_parameter(model, cont),
        get(cfg, "breakdown.eps_max", float(eps[-1]), kind=float),
    )
    paths.append(bp_path)
    return paths


def _density(cfg, key):
    family = get(cfg, "assumptions.family", kind=str)
    mean = get(cfg, f"{key}.mean", kind=float)
    try:
        if family == "normal":
            return Normal(mean, get(cfg, f"{key}.sd", kind=float))
        if family == "poisson":
            return Poisson(mean)
        if family == "exponential":
            return Exponential(mean)
    except DpdError as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError("assumptions.family", f"unsupported family {family!r}")


def cmd_check_assumptions(cfg, args, out):
    family = get(cfg, "assumptions.family", kind=str)
    f = _density(cfg, "assumptions.model")
    g = _density(cfg, "assumptions.truth") if get(cfg, "assumptions.truth", None) is not None else f
    ms = [int(m) for m in float_list(cfg, "assumptions.m")]
    alpha = get(cfg, "assumptions.alpha", 1.0, kind=float)
    base = get(cfg, "assumptions.base", 10.0, kind=float)
    rows = overlap_schedule(f, g, family, ms, alpha, base)
    prefix = get(cfg, "output.prefix", "assumptions", kind=str)
    path = out / f"{prefix}.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMA_LINE + "\n")
        w = csv.writer(fh)
        w.writerow(["m", "eta", "overlap_model_contaminant", "overlap_truth_model", "power_norm_contaminant"])
        for r in rows:
            w.writerow(
                [
                    r.m,
                    repr(r.eta),
                    repr(r.overlap_model_contaminant),
                    repr(r.overlap_truth_model),
                    repr(r.power_norm_contaminant),
                ]
            )
        # A pmf never exceeds 1, so C = 1 for Poisson.  Continuous families
        # have M_k -> 0 as the contaminant scale diverges (last column), so
        # the bounded-power constant is C = 0.
        sup_m = max(r.power_norm_contaminant for r in rows)
        fh.write(f"#sup_power_norm={sup_m!r}\n")
        fh.write(f"#C={1.0 if family == 'poisson' else 0.0!r}\n")
    return [path]


HANDLERS = {
    "fit": cmd_fit,
    "mdpdf-sweep": cmd_mdpdf_sweep,
    "abp-bound": cmd_abp_bound,
    "simulate": cmd_simulate,
    "check-assumptions": cmd_check_assumptions,
}


def build_parser():
    p = argparse.ArgumentParser(prog="dpdbp", description="Density power divergence breakdown experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment configuration")
    p.add_argument("--out", default=None, help="output directory (default: output.dir or ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for grids and replicates")
    p.add_argument("--seed", type=int, default=None, help="override the config's base seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        declared = cfg.get("experiment")
        if declared is not None and declared != args.command:
            raise ConfigError("experiment", f"config is for {declared!r}, not {args.command!r}")
        if args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        out = Path(args.out or get(cfg, "output.dir", "out", kind=str))
        out.mkdir(parents=True, exist_ok=True)
        paths = HANDLERS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"dpdbp: config error at {exc.key}: {str(exc).split(': ', 1)[-1]}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"dpdbp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DpdError as exc:
        print(f"dpdbp: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
