"""Replicated finite-sample experiments under contamination."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .breakdown import SCHEMA_LINE
from .errors import DomainError
from .estimation import OptimizerConfig, mdpde_fit

# Cells where fewer than this share of replicates converge are flagged.
MIN_CONV_RATE = 0.5


def sample_contaminated(model, theta0, cont, eps, seed, fixed_count=False):
    """One contaminated response vector.

    The clean draw comes first from the seeded generator, so eps = 0
    reproduces ``model.sample(theta0, seed)`` exactly.  Contamination flags
    are Bernoulli(eps) per observation, or exactly round(eps n) randomly
    placed observations when ``fixed_count`` is set.
    """
    if not 0.0 <= eps < 1.0:
        raise DomainError(f"eps must lie in [0, 1), got {eps}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = model.sample_rng(theta0, rng)
    if eps == 0:
        return y
    if fixed_count:
        flags = np.zeros(model.n, dtype=bool)
        flags[rng.permutation(model.n)[: int(round(eps * model.n))]] = True
    else:
        flags = rng.random(model.n) < eps
    return np.where(flags, cont.sample_rng(rng), y)


def replicate_seed(base_seed, i_eps, rep):
    return np.random.SeedSequence([int(base_seed), int(i_eps), int(rep)])


@dataclass(frozen=True)
class SimulationPlan:
    """Grid of (alpha, eps) cells, each fitted on ``n_reps`` datasets.

    For a given (eps, replicate) the same dataset is fitted at every
    alpha, so differences between alpha curves are not sampling noise.
    """

    model: object
    theta0: np.ndarray
    cont: object
    alpha_grid: tuple
    eps_grid: tuple
    n_reps: int = 500
    base_seed: int = 0
    opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(n_starts=3, method="gradient"))
    fixed_count: bool = False

    def __post_init__(self):
        if self.n_reps < 1:
            raise DomainError("n_reps must be >= 1")
        a = np.asarray(self.alpha_grid, dtype=float)
        e = np.asarray(self.eps_grid, dtype=float)
        if a.size == 0 or np.any((a < 0) | (a > 1)):
            raise DomainError("alpha grid must lie in [0, 1]")
        if e.size == 0 or np.any((e < 0) | (e >= 1)):
            raise DomainError("eps grid must lie in [0, 1)")
        object.__setattr__(self, "alpha_grid", tuple(float(v) for v in a))
        object.__setattr__(self, "eps_grid", tuple(float(v) for v in e))
        object.__setattr__(self, "theta0", self.model.check(self.theta0))


@dataclass
class ReplicateSummary:
    """Per-cell replicate estimates and their quantile summaries.

    ``estimates`` has shape ``(n_alpha, n_eps, n_reps, d)``; ``converged``
    matches the first three axes.
    """

    alpha_grid: np.ndarray
    eps_grid: np.ndarray
    estimates: np.ndarray
    converged: np.ndarray
    param_names: tuple

    def quantiles(self):
        """``(q25, median, q75)`` over converged replicates, each ``(na, ne, d)``."""
        na, ne, _, d = self.estimates.shape
        out = np.full((3, na, ne, d), np.nan)
        for ia in range(na):
            for ie in range(ne):
                ok = self.converged[ia, ie]
                if ok.any():
                    out[:, ia, ie] = np.quantile(self.estimates[ia, ie, ok], [0.25, 0.5, 0.75], axis=0)
        return out[0], out[1], out[2]

    @property
    def conv_rate(self):
        return self.converged.mean(axis=2)

    def median_curve(self, alpha):
        ia = int(np.argmin(np.abs(self.alpha_grid - alpha)))
        return self.eps_grid, self.quantiles()[1][ia]

    def to_csv(self, path):
        q25, med, q75 = self.quantiles()
        rate = self.conv_rate
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(SCHEMA_LINE + "\n")
            w = csv.writer(fh)
            w.writerow(["alpha", "eps", "coord", "median", "q25", "q75", "conv_rate", "flag"])
            for ia, a in enumerate(self.alpha_grid):
                for ie, e in enumerate(self.eps_grid):
                    flag = "low-convergence" if rate[ia, ie] < MIN_CONV_RATE else ""
                    for j, name in enumerate(self.param_names):
                        w.writerow(
                            [
                                repr(float(a)),
                                repr(float(e)),
                                name,
                                repr(float(med[ia, ie, j])),
                                repr(float(q25[ia, ie, j])),
                                repr(float(q75[ia, ie, j])),
                                repr(float(rate[ia, ie])),
                                flag,
                            ]
                        )


def read_summary_csv(path):
    """Rows of a summary CSV as dicts with floats where applicable."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    for r in rows:
        for k in ("alpha", "eps", "median", "q25", "q75", "conv_rate"):
            r[k] = float(r[k])
    return rows


def _run_block(args):
    plan, ie, reps = args
    eps = plan.eps_grid[ie]
    d = plan.model.dim
    est = np.full((len(plan.alpha_grid), len(reps), d), np.nan)
    conv = np.zeros((len(plan.alpha_grid), len(reps)), dtype=bool)
    for k, rep in enumerate(reps):
        rng = np.random.default_rng(replicate_seed(plan.base_seed, ie, rep))
        y = sample_contaminated(plan.model, plan.theta0, plan.cont, eps, rng, plan.fixed_count)
        for ia, a in enumerate(plan.alpha_grid):
            fit = mdpde_fit(plan.model, y, a, plan.opt)
            est[ia, k] = fit.theta_hat
            conv[ia, k] = fit.converged
    return ie, reps, est, conv


def run_simulation(plan: SimulationPlan, threads=1, chunk=25):
    """Fit every (alpha, eps, replicate) cell; returns a ReplicateSummary.

    Work is split into blocks of replicates at one eps.  Results are placed
    by index, so the output does not depend on completion order or thread
    count.
    """
    na, ne, R = len(plan.alpha_grid), len(plan.eps_grid), plan.n_reps
    est = np.full((na, ne, R, plan.model.dim), np.nan)
    conv = np.zeros((na, ne, R), dtype=bool)
    jobs = [(plan, ie, list(range(s, min(s + chunk, R)))) for ie in range(ne) for s in range(0, R, chunk)]
    threads = max(1, min(int(threads), len(jobs), os.cpu_count() or 1))
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(j) for j in jobs]
    for ie, reps, e, c in results:
        est[:, ie, reps] = e
        conv[:, ie, reps] = c
    return ReplicateSummary(
        np.array(plan.alpha_grid), np.array(plan.eps_grid), est, conv, tuple(plan.model.param_names)
    )
