"""Breakdown-point bounds, empirical breakdown detection and overlap checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .divergence import (
    Exponential,
    Normal,
    Poisson,
    _check_same_support,
    _ragged,
    poisson_logpmf,
    poisson_power_sums,
    poisson_window,
    power_norm,
    q_alpha,
)
from .errors import DomainError, NumericalError

SCHEMA_LINE = "#schema=v1"


# --------------------------------------------------------------------------
# Lower bound on the asymptotic breakdown point
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundProblem:
    C: float
    L0: float
    alpha: float

    def __post_init__(self):
        if not (self.C >= 0 and math.isfinite(self.C)):
            raise DomainError(f"C must be finite and >= 0, got {self.C}")
        if not (self.L0 > 0 and math.isfinite(self.L0)):
            raise DomainError(f"L0 must be finite and > 0, got {self.L0}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be finite and > 0, got {self.alpha}")

    def h(self, x):
        """(C/alpha) x^(1+alpha) + q_alpha(1 - x) L0; increasing on [0, 1]."""
        a = self.alpha
        return (self.C / a) * x ** (1.0 + a) + q_alpha(1.0 - x, a) * self.L0


def abp_root(prob: BoundProblem, tol=1e-12, residual_tol=1e-12):
    """Unique root of ``prob.h`` in (0, 1), found by bisection.

    Stops once the bracket is narrower than ``tol`` and the residual is
    below ``residual_tol`` (h is steep for small alpha), or when the
    bracket cannot shrink further in floating point.
    """
    lo, hi = 0.0, 1.0
    if not (prob.h(lo) < 0 < prob.h(hi)):
        raise NumericalError(f"bound function does not change sign on [0, 1] for {prob}")
    while True:
        mid = 0.5 * (lo + hi)
        hm = prob.h(mid)
        if (hi - lo <= tol and abs(hm) <= residual_tol) or mid in (lo, hi):
            return mid
        if hm < 0:
            lo = mid
        else:
            hi = mid


def abp_lower_bound(prob: BoundProblem, tol=1e-12):
    """min(root, 1/2): the lower bound on the asymptotic breakdown point."""
    # h is increasing, so h(1/2) <= 0 means root >= 1/2; this keeps the
    # clamped value exact when the root sits on 1/2 (C = 0, alpha = 1).
    if prob.h(0.5) <= 0:
        return 0.5
    return min(abp_root(prob, tol), 0.5)


def level_curve_L0(alpha, level=0.2, C=1.0):
    """L0 at which the root equals ``level`` for each alpha.

    Solves h(level) = 0 for L0; requires (1 + alpha) * level < 1.
    """
    alpha = np.asarray(alpha, dtype=float)
    denom = 1.0 - (1.0 + alpha) * level
    if np.any(denom <= 0):
        raise DomainError("level too large for the requested alpha values")
    return C * level ** (1.0 + alpha) / denom


def compute_L0(model, theta0, alpha, mc=None, tol=1e-14):
    """n^-1 sum_i M_{g_i} at the true parameter.

    Exact (closed form or truncated sum) unless ``mc`` requests Monte-Carlo
    for a Poisson model, in which case M_g = E_g[g^alpha(Y)] is averaged
    over ``mc.n_draws`` draws per observation.
    """
    return compute_L0_with_se(model, theta0, alpha, mc, tol)[0]


def compute_L0_with_se(model, theta0, alpha, mc=None, tol=1e-14):
    """``(L0, standard error)``; the error is 0 for exact evaluation."""
    theta0 = model.check(theta0)
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    if model.discrete and mc is not None and mc.mode == "monte-carlo":
        rng = np.random.default_rng(mc.seed)
        means = model.rate(theta0)
        est = np.empty(model.n)
        var = np.empty(model.n)
        for i, m in enumerate(means):
            v = np.exp(alpha * poisson_logpmf(rng.poisson(m, mc.n_draws).astype(float), m))
            est[i] = v.mean()
            var[i] = v.var(ddof=1) / mc.n_draws if mc.n_draws > 1 else 0.0
        return float(est.mean()), float(math.sqrt(var.sum()) / model.n)
    return float(np.mean(model.power_norms(theta0, alpha, tol))), 0.0


@dataclass(frozen=True)
class BoundRow:
    alpha: float
    L0: float
    bound: float


def poisson_bound_sweep(model, theta0, alpha_grid, mc=None, C=1.0):
    """Lower bound against alpha for a Poisson log-link model.

    C = 1 holds for any discrete contaminant since every PMF is at most 1.
    """
    if not model.discrete:
        raise DomainError("poisson_bound_sweep needs a Poisson model")
    rows = []
    for a in alpha_grid:
        L0 = compute_L0(model, theta0, float(a), mc)
        rows.append(BoundRow(float(a), L0, abp_lower_bound(BoundProblem(C, L0, float(a)))))
    return rows


def bound_grid(L0_grid, alpha_grid, C=1.0):
    """Bounds on a user L0 x alpha grid; rows follow ``L0_grid``."""
    return np.array(
        [[abp_lower_bound(BoundProblem(C, float(L0), float(a))) for a in alpha_grid] for L0 in L0_grid]
    )


def write_bound_csv(path, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMA_LINE + "\n")
        w = csv.writer(fh)
        w.writerow(["alpha", "L0", "bound"])
        for r in rows:
            w.writerow([repr(r.alpha), repr(r.L0), repr(r.bound)])


# --------------------------------------------------------------------------
# Sweep tables
# --------------------------------------------------------------------------


@dataclass
class SweepTable:
    """Functional or estimator values on an (alpha, eps) grid.

    ``theta`` has shape ``(len(alpha_grid), len(eps_grid), d)``.
    """

    alpha_grid: np.ndarray
    eps_grid: np.ndarray
    theta: np.ndarray
    objective: np.ndarray
    status: list
    param_names: tuple = ()

    def __post_init__(self):
        self.alpha_grid = np.asarray(self.alpha_grid, dtype=float)
        self.eps_grid = np.asarray(self.eps_grid, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.objective = np.asarray(self.objective, dtype=float)
        for name, g in (("alpha_grid", self.alpha_grid), ("eps_grid", self.eps_grid)):
            if g.ndim != 1 or np.any(np.diff(g) <= 0):
                raise DomainError(f"{name} must be strictly increasing")
        na, ne = self.alpha_grid.size, self.eps_grid.size
        if self.theta.ndim != 3 or self.theta.shape[:2] != (na, ne):
            raise DomainError(f"theta has shape {self.theta.shape}, grids need ({na}, {ne}, d)")
        if self.objective.shape != (na, ne) or len(self.status) != na:
            raise DomainError("objective/status dimensions do not match the grids")
        if not self.param_names:
            self.param_names = tuple(f"theta_{j + 1}" for j in range(self.theta.shape[2]))

    @property
    def dim(self):
        return self.theta.shape[2]

    def row(self, alpha):
        """``(eps_grid, theta curve)`` at the grid alpha closest to ``alpha``."""
        ia = int(np.argmin(np.abs(self.alpha_grid - alpha)))
        return self.eps_grid, self.theta[ia]

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(SCHEMA_LINE + "\n")
            w = csv.writer(fh)
            w.writerow(["alpha", "eps"] + [f"theta_{j + 1}" for j in range(self.dim)] + ["objective", "status"])
            for ia, a in enumerate(self.alpha_grid):
                for ie, e in enumerate(self.eps_grid):
                    w.writerow(
                        [repr(float(a)), repr(float(e))]
                        + [repr(float(v)) for v in self.theta[ia, ie]]
                        + [repr(float(self.objective[ia, ie])), self.status[ia][ie]]
                    )

    @classmethod
    def from_csv(cls, path, param_names=()):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
        alphas = sorted({float(r["alpha"]) for r in rows})
        epss = sorted({float(r["eps"]) for r in rows})
        d = sum(1 for k in rows[0] if k.startswith("theta_"))
        theta = np.full((len(alphas), len(epss), d), np.nan)
        obj = np.full((len(alphas), len(epss)), np.nan)
        status = [["missing"] * len(epss) for _ in alphas]
        for r in rows:
            ia, ie = alphas.index(float(r["alpha"])), epss.index(float(r["eps"]))
            theta[ia, ie] = [float(r[f"theta_{j + 1}"]) for j in range(d)]
            obj[ia, ie] = float(r["objective"])
            status[ia][ie] = r["status"]
        return cls(np.array(alphas), np.array(epss), theta, obj, status, tuple(param_names))


# --------------------------------------------------------------------------
# Empirical breakdown detection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BreakdownPoint:
    """Detected breakdown on a finite eps grid.

    ``value`` is None when no sustained breakdown occurs.  ``ambiguous``
    marks curves that break, recover and break again; ``candidates`` then
    holds the first and the sustained breakdown eps.
    """

    value: float | None
    ambiguous: bool = False
    candidates: tuple = ()


def basin_distances(thetas, theta0, theta_c):
    """RMS distances to theta0 and to theta_c, each coordinate scaled by
    its separation |theta_c - theta0| so the two points sit 1 apart."""
    theta0 = np.asarray(theta0, dtype=float)
    theta_c = np.asarray(theta_c, dtype=float)
    sep = np.abs(theta_c - theta0)
    floor = 1e-6 * max(float(sep.max()), 1e-12)
    sep = np.maximum(sep, floor)
    t = np.atleast_2d(np.asarray(thetas, dtype=float))
    d0 = np.sqrt(np.mean(((t - theta0) / sep) ** 2, axis=1))
    dc = np.sqrt(np.mean(((t - theta_c) / sep) ** 2, axis=1))
    return d0, dc


def empirical_breakdown_point(eps_grid, thetas, theta0, theta_c, eps_max=0.5, escape_radius=1.0):
    """Smallest grid eps from which the curve stays broken up to ``eps_max``.

    A point is broken when it is closer to the contaminant parameter than
    to theta0, or (with ``escape_radius`` set) when it is further than
    ``escape_radius`` separations from theta0 in any direction.  Points
    that are not finite count as broken.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    keep = eps_grid <= eps_max + 1e-12
    eps_grid = eps_grid[keep]
    thetas = np.asarray(thetas, dtype=float)[keep]
    if eps_grid.size == 0:
        return BreakdownPoint(None)
    d0, dc = basin_distances(thetas, theta0, theta_c)
    broken = ~np.isfinite(d0) | (dc < d0)
    if escape_radius is not None:
        broken |= d0 > escape_radius
    if not broken[-1]:
        first = np.flatnonzero(broken)
        if first.size:
            return BreakdownPoint(None, True, (float(eps_grid[first[0]]),))
        return BreakdownPoint(None)
    k = len(broken) - 1
    while k > 0 and broken[k - 1]:
        k -= 1
    sustained = float(eps_grid[k])
    first = int(np.flatnonzero(broken)[0])
    if first < k:
        return BreakdownPoint(sustained, True, (float(eps_grid[first]), sustained))
    return BreakdownPoint(sustained)


# --------------------------------------------------------------------------
# Overlap masses (singularity assumptions)
# --------------------------------------------------------------------------


def _exponential_overlap(p, eta):
    if p == eta:
        return 1.0
    if eta < p:
        p, eta = eta, p
    v = (math.log(eta) - math.log(p)) / (1.0 / p - 1.0 / eta)
    return float(-math.expm1(-v / eta) + math.exp(-v / p))


def _normal_crossings(f, k):
    # log f - log k = a y^2 + b y + c
    a = 0.5 / k.sd**2 - 0.5 / f.sd**2
    b = f.mean / f.sd**2 - k.mean / k.sd**2
    c = 0.5 * k.mean**2 / k.sd**2 - 0.5 * f.mean**2 / f.sd**2 + math.log(k.sd / f.sd)
    if a == 0:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = math.sqrt(disc)
    return sorted([(-b - r) / (2 * a), (-b + r) / (2 * a)])


def _normal_overlap(f, k):
    if f == k:
        return 1.0
    cuts = [-math.inf] + _normal_crossings(f, k) + [math.inf]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if math.isinf(lo) and math.isinf(hi):
            t = f.mean
        elif math.isinf(lo):
            t = hi - 1.0
        elif math.isinf(hi):
            t = lo + 1.0
        else:
            t = 0.5 * (lo + hi)
        d = f if f.logpdf(t) <= k.logpdf(t) else k
        dist = stats.norm(d.mean, d.sd)
        total += dist.sf(lo) - dist.sf(hi) if lo > d.mean else dist.cdf(hi) - dist.cdf(lo)
    return float(min(max(total, 0.0), 1.0))


def _poisson_overlap(f, k, tol):
    lo_f, hi_f = poisson_window(f.mean, tol)
    lo_k, hi_k = poisson_window(k.mean, tol)
    lo = np.atleast_1d(min(lo_f, lo_k))
    hi = np.atleast_1d(max(hi_f, hi_k))
    _, y, _ = _ragged(lo, hi)
    return float(np.sum(np.exp(np.minimum(poisson_logpmf(y, f.mean), poisson_logpmf(y, k.mean)))))


def overlap_mass(f, k, tol=1e-14):
    """Integral of min(f, k); closed forms for exponential and normal pairs."""
    _check_same_support(f, k)
    if type(f) is not type(k):
        raise DomainError(f"unsupported pair {type(f).__name__}/{type(k).__name__}")
    if isinstance(f, Exponential):
        return _exponential_overlap(f.mean, k.mean)
    if isinstance(f, Normal):
        return _normal_overlap(f, k)
    if isinstance(f, Poisson):
        return min(_poisson_overlap(f, k, tol), 1.0)
    raise DomainError(f"unsupported density {type(f).__name__}")


@dataclass(frozen=True)
class OverlapRow:
    m: int
    eta: float
    overlap_model_contaminant: float
    overlap_truth_model: float
    power_norm_contaminant: float


def overlap_schedule(f, g, family, m_values, alpha=1.0, base=10.0):
    """Overlap masses along a diverging schedule eta_m = base^m.

    For each m the contaminant k_m and the diverging model member f_m are
    the family member with mean eta_m (same sd as ``f`` for normal).  Rows
    report int min(f, k_m), int min(g, f_m) and M_{k_m}; the supremum of
    the last column is the constant C of the bounded-power assumption.
    """
    rows = []
    for m in m_values:
        eta = float(base) ** m
        if family == "normal":
            km, fm = Normal(eta, f.sd), Normal(eta, f.sd)
        elif family == "poisson":
            km = fm = Poisson(eta)
        elif family == "exponential":
            km = fm = Exponential(eta)
        else:
            raise DomainError(f"unsupported family {family!r}")
        rows.append(
            OverlapRow(int(m), eta, overlap_mass(f, km), overlap_mass(g, fm), float(power_norm(km, alpha)))
        )
    return rows


def poisson_pmf_bound(alpha, means):
    """sup over the given means of M for Poisson: never above 1, so C = 1 is valid."""
    return float(np.max(poisson_power_sums(np.asarray(means, dtype=float), alpha)))
