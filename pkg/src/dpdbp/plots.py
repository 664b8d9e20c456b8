"""Figures drawn from the CSV outputs only, so they can be regenerated."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .breakdown import SweepTable
from .simulation import read_summary_csv
from .svg import Plot


def _read_rows(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def sweep_plots(csv_path, out_dir, param_names, prefix="sweep", ylim=None):
    """One SVG per coordinate: functional value against eps, a curve per alpha."""
    table = SweepTable.from_csv(csv_path, param_names)
    ylim = ylim or {}
    paths = []
    for j, name in enumerate(table.param_names):
        plot = Plot(f"MDPDF of {name}", "contamination proportion eps", name, ylim=ylim.get(name))
        for ia, a in enumerate(table.alpha_grid):
            plot.add(f"alpha={a:g}", table.eps_grid, table.theta[ia, :, j])
        p = Path(out_dir) / f"{prefix}_{name}.svg"
        plot.save(p)
        paths.append(p)
    return paths


def band_plots(csv_path, out_dir, prefix="simulation", ylim=None):
    """Median curve with interquartile band per alpha, one SVG per coordinate."""
    rows = read_summary_csv(csv_path)
    ylim = ylim or {}
    coords = list(dict.fromkeys(r["coord"] for r in rows))
    alphas = sorted({r["alpha"] for r in rows})
    paths = []
    for name in coords:
        plot = Plot(f"Median MDPDE of {name} (25-75% band)", "contamination proportion eps", name, ylim=ylim.get(name))
        for a in alphas:
            sel = sorted((r for r in rows if r["coord"] == name and r["alpha"] == a), key=lambda r: r["eps"])
            plot.add(
                f"alpha={a:g}",
                np.array([r["eps"] for r in sel]),
                np.array([r["median"] for r in sel]),
                lower=np.array([r["q25"] for r in sel]),
                upper=np.array([r["q75"] for r in sel]),
            )
        p = Path(out_dir) / f"{prefix}_{name}.svg"
        plot.save(p)
        paths.append(p)
    return paths


def bound_plot(csv_path, out_path):
    rows = _read_rows(csv_path)
    a = np.array([float(r["alpha"]) for r in rows])
    b = np.array([float(r["bound"]) for r in rows])
    plot = Plot("Lower bound of the asymptotic breakdown point", "alpha", "lower bound")
    plot.add("bound", a, b)
    plot.save(out_path)
    return Path(out_path)


def bound_grid_plots(csv_path, out_dir, prefix="bound_grid"):
    """Bound against alpha for each L0, plus the level curve in the
    (alpha, L0) plane when the CSV carries one."""
    rows = _read_rows(csv_path)
    grid_rows = [r for r in rows if r["kind"] == "grid"]
    plot = Plot("Lower bound for fixed L0", "alpha", "lower bound")
    for L0 in sorted({float(r["L0"]) for r in grid_rows}):
        sel = sorted((r for r in grid_rows if float(r["L0"]) == L0), key=lambda r: float(r["alpha"]))
        plot.add(f"L0={L0:g}", np.array([float(r["alpha"]) for r in sel]), np.array([float(r["bound"]) for r in sel]))
    paths = [Path(out_dir) / f"{prefix}.svg"]
    plot.save(paths[0])
    level_rows = sorted((r for r in rows if r["kind"] == "level"), key=lambda r: float(r["alpha"]))
    if level_rows:
        level = float(level_rows[0]["bound"])
        curve = Plot(f"L0 at which the bound equals {level:g}", "alpha", "L0")
        curve.add(
            f"bound={level:g}",
            np.array([float(r["alpha"]) for r in level_rows]),
            np.array([float(r["L0"]) for r in level_rows]),
        )
        paths.append(Path(out_dir) / f"{prefix}_level.svg")
        curve.save(paths[1])
    return paths
