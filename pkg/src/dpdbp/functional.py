"""Population objective H*_{n,alpha} and its minimiser under contamination.

Each observation's true distribution is the mixture
``(1 - eps) f_{i,theta0} + eps k_i`` of the model at ``theta0`` and a fixed
contaminating density ``k_i``.  Normal and exponential families use exact
closed forms; for Poisson the cross terms ``E_g[f^alpha(Y)]`` are either
Monte-Carlo averages over a fixed set of draws (common random numbers, so
the surface seen by the optimiser is smooth) or exact truncated sums.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

from .breakdown import SweepTable
from .divergence import (
    Exponential,
    Normal,
    Poisson,
    gaussian_cross_moment,
    poisson_cross_sums,
    poisson_logpmf,
    poisson_window,
    _ragged,
)
from .errors import ConfigError, DomainError
from .estimation import OptimizerConfig, minimize_internal

DEFAULT_TAIL_TOL = 1e-14


@dataclass(frozen=True)
class MonteCarloConfig:
    """Draws per observation and component for Poisson cross terms.

    ``mode="exact"`` replaces the Monte-Carlo averages by truncated sums.
    """

    n_draws: int = 20000
    seed: int = 0
    mode: str = "monte-carlo"

    def __post_init__(self):
        if self.mode not in ("monte-carlo", "exact"):
            raise ConfigError("monte_carlo.mode", f"unknown mode {self.mode!r}")
        if self.mode == "monte-carlo" and not self.n_draws >= 1:
            raise ConfigError("monte_carlo.n_draws", f"must be >= 1, got {self.n_draws}")


@dataclass(frozen=True)
class ContaminationScheme:
    """Mixing proportion and one contaminating density per observation.

    ``family`` is ``"normal"``, ``"poisson"`` or ``"exponential"``;
    ``means`` (and ``sds`` for normal) hold the contaminant parameters.
    ``theta`` is the contaminating parameter vector when the contaminant
    belongs to the model family, otherwise ``None``.
    """

    eps: float
    family: str
    means: np.ndarray
    sds: np.ndarray | None = None
    theta: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise DomainError(f"eps must lie in [0, 1), got {self.eps}")
        if self.family not in ("normal", "poisson", "exponential"):
            raise DomainError(f"unknown contaminant family {self.family!r}")
        means = np.asarray(self.means, dtype=float).ravel()
        if not np.all(np.isfinite(means)):
            raise DomainError("contaminant means must be finite")
        if self.family != "normal" and np.any(means <= 0):
            raise DomainError(f"{self.family} contaminant means must be > 0")
        object.__setattr__(self, "means", means)
        if self.family == "normal":
            if self.sds is None:
                raise DomainError("normal contaminants need sds")
            sds = np.broadcast_to(np.asarray(self.sds, dtype=float), means.shape).copy()
            if not np.all((sds > 0) & np.isfinite(sds)):
                raise DomainError("contaminant sds must be finite and > 0")
            object.__setattr__(self, "sds", sds)
        if self.theta is not None:
            object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    @property
    def n(self):
        return self.means.size

    @classmethod
    def from_model(cls, model, theta, eps):
        """Contaminate with the model's own family at parameter ``theta``."""
        theta = model.check(theta)
        means = model.location(theta)
        sds = np.full(model.n, theta[-1]) if model.family == "normal" else None
        return cls(eps, model.family, means, sds, theta)

    @classmethod
    def linear_mean(cls, model, coef, eps, family=None, sd=None):
        """Contaminants with mean ``x_i' coef`` (for example Poisson(3 + 2x))."""
        means = model.design.rows @ np.asarray(coef, dtype=float)
        family = family or model.family
        sds = None if family != "normal" else np.full(model.n, float(sd))
        return cls(eps, family, means, sds)

    def with_eps(self, eps):
        return replace(self, eps=float(eps))

    def densities(self):
        if self.family == "normal":
            return [Normal(float(m), float(s)) for m, s in zip(self.means, self.sds)]
        kind = Poisson if self.family == "poisson" else Exponential
        return [kind(float(m)) for m in self.means]

    def sample_rng(self, rng):
        """One draw from every contaminant."""
        if self.family == "normal":
            return rng.normal(self.means, self.sds)
        if self.family == "poisson":
            return rng.poisson(self.means).astype(float)
        return rng.exponential(self.means)


@dataclass(frozen=True)
class FunctionalResult:
    theta_star: np.ndarray
    objective: float
    eps: float
    alpha: float
    converged: bool = True
    grad_norm: float = 0.0


def contaminant_parameter(model, cont):
    """Parameter the contaminant 'looks like' from inside the model.

    When the contaminant is a member of the family this is its own
    parameter.  Otherwise it is the Kullback-Leibler projection of the
    contaminants onto the family: a convex GLM-type fit to the contaminant
    means.
    """
    if cont.theta is not None:
        return cont.theta
    if cont.family != model.family:
        raise DomainError("contaminant parameter needs a same-family contaminant")
    X = model.design.rows
    eta = cont.means
    if model.family == "poisson":

        def fg(t):
            lin = X @ t
            r = np.exp(lin)
            return float(np.sum(r - eta * lin)), X.T @ (r - eta)

    elif model.family == "exponential":

        def fg(t):
            lin = X @ t
            e = np.exp(-lin)
            return float(np.sum(lin + eta * e)), X.T @ (1.0 - eta * e)

    else:
        raise DomainError(f"no projection rule for {model.family}")
    start = np.linalg.lstsq(X, np.log(eta), rcond=None)[0]
    res = optimize.minimize(fg, start, jac=True, method="BFGS", options={"gtol": 1e-10})
    return res.x


# --------------------------------------------------------------------------
# Per-component cross terms
# --------------------------------------------------------------------------


class _Component:
    """One mixture component per observation, with its cross-moment rule."""

    def __init__(self, model, family, means, sds, alpha, mc, rng, tol):
        self.model = model
        self.family = family
        self.means = means
        self.sds = sds
        self.alpha = alpha
        self.tol = tol
        self.draws = None
        self.log_fact = None
        if family == "poisson" and alpha > 0 and mc.mode == "monte-carlo":
            self._draw(mc.n_draws, rng)
        if family == "poisson" and alpha == 0:
            lo, hi = poisson_window(means, tol)
            owner, y, offsets = _ragged(lo, hi)
            w = np.exp(poisson_logpmf(y, means[owner]))
            self.log_fact = np.add.reduceat(w * special.gammaln(y + 1.0), offsets)

    def _draw(self, n_draws, rng):
        # Compress the draws to (observation, value, count) triples: Poisson
        # draws have few distinct values so this is much cheaper to evaluate.
        owners, values, weights = [], [], []
        for i, m in enumerate(self.means):
            u, c = np.unique(rng.poisson(m, n_draws), return_counts=True)
            owners.append(np.full(u.size, i))
            values.append(u.astype(float))
            weights.append(c / n_draws)
        self.draws = (np.concatenate(owners), np.concatenate(values), np.concatenate(weights))
        self.n_draws = n_draws

    def cross(self, theta):
        """Per-row integral of g f^alpha and its theta-gradient."""
        model, a = self.model, self.alpha
        if self.family == "normal":
            return self._normal_cross(theta)
        p = model.rate(theta)
        X = model.design.rows
        if self.family == "exponential":
            c = p ** (1.0 - a) / (a * self.means + p)
            dlogp = c * ((1.0 - a) - p / (a * self.means + p))
            return c, dlogp[:, None] * X
        if self.draws is None:
            c, c1 = poisson_cross_sums(self.means, p, a, self.tol, with_moment=True)
            return c, (a * c1)[:, None] * X
        owner, y, w = self.draws
        po = p[owner]
        fa = w * np.exp(a * poisson_logpmf(y, po))
        c = np.bincount(owner, fa, minlength=model.n)
        c1 = np.bincount(owner, fa * (y - po), minlength=model.n)
        return c, (a * c1)[:, None] * X

    def cross_variance(self, theta):
        """Per-row Monte-Carlo variance of the cross-term estimate."""
        if self.draws is None:
            return np.zeros(self.model.n)
        owner, y, w = self.draws
        fa = np.exp(self.alpha * poisson_logpmf(y, self.model.rate(theta)[owner]))
        m1 = np.bincount(owner, w * fa, minlength=self.model.n)
        m2 = np.bincount(owner, w * fa * fa, minlength=self.model.n)
        return np.maximum(m2 - m1 * m1, 0.0) / self.n_draws

    def _normal_cross(self, theta):
        model, a = self.model, self.alpha
        beta, s = theta[:-1], theta[-1]
        mu = model.mean.value(model.design.rows, beta)
        J = model.mean.jacobian(model.design.rows, beta)
        c = gaussian_cross_moment(self.means, self.sds, mu, s, a)
        v = a * self.sds**2 + s * s
        d = self.means - mu
        dmu = c * a * d / v
        ds = c * ((1.0 - a) / s - s / v + a * d * d * s / (v * v))
        return c, np.column_stack([J * dmu[:, None], ds])

    def expected_loglik(self, theta):
        """E_g log f_theta per row and its gradient (the alpha = 0 limit)."""
        model = self.model
        if self.family == "normal":
            beta, s = theta[:-1], theta[-1]
            mu = model.mean.value(model.design.rows, beta)
            J = model.mean.jacobian(model.design.rows, beta)
            q = (self.means - mu) ** 2 + self.sds**2
            val = -math.log(s) - 0.5 * math.log(2 * math.pi) - q / (2 * s * s)
            grad = np.column_stack([J * ((self.means - mu) / s**2)[:, None], -1.0 / s + q / s**3])
            return val, grad
        p = model.rate(theta)
        X = model.design.rows
        if self.family == "exponential":
            return -np.log(p) - self.means / p, (self.means / p - 1.0)[:, None] * X
        val = self.means * np.log(p) - p - self.log_fact
        return val, (self.means - p)[:, None] * X


class Population:
    """H*_{n,alpha} for a fixed model, truth, contamination and alpha.

    Monte-Carlo draws (Poisson only) are made once at construction from
    ``mc.seed``; every later evaluation reuses them.
    """

    def __init__(self, model, theta0, cont, alpha, mc=None, tol=DEFAULT_TAIL_TOL):
        if not alpha >= 0:
            raise DomainError(f"alpha must be >= 0, got {alpha}")
        if cont.n != model.n:
            raise DomainError(f"contamination has {cont.n} observations, model has {model.n}")
        mc = mc or MonteCarloConfig()
        self.model, self.alpha, self.eps, self.tol = model, float(alpha), float(cont.eps), tol
        self.theta0 = model.check(theta0)
        rng = np.random.default_rng(mc.seed)
        sd0 = np.full(model.n, self.theta0[-1]) if model.family == "normal" else None
        self.clean = _Component(model, model.family, model.location(self.theta0), sd0, alpha, mc, rng, tol)
        self.cont = None
        if cont.eps > 0:
            self.cont = _Component(model, cont.family, cont.means, cont.sds, alpha, mc, rng, tol)
            if cont.family != model.family:
                raise DomainError("contaminant and model families differ")

    def _mix(self, fn, theta):
        v, g = fn(self.clean)(theta)
        if self.cont is None:
            return v, g
        vk, gk = fn(self.cont)(theta)
        e = self.eps
        return (1 - e) * v + e * vk, (1 - e) * g + e * gk

    def value_and_grad(self, theta):
        model, a = self.model, self.alpha
        if a == 0:
            v, g = self._mix(lambda c: c.expected_loglik, theta)
            return 1.0 - float(np.mean(v)), -g.mean(axis=0)
        m, su = model.power_terms(theta, a, self.tol)
        c, dc = self._mix(lambda comp: comp.cross, theta)
        k = 1.0 + 1.0 / a
        value = float(np.mean(m - k * c + 1.0 / a))
        grad = ((1.0 + a) * su - k * dc).mean(axis=0)
        return value, grad

    def value(self, theta):
        return self.value_and_grad(theta)[0]

    def standard_error(self, theta):
        """Monte-Carlo standard error of ``value(theta)`` (0 for exact terms)."""
        if self.alpha == 0:
            return 0.0
        var = (1 - self.eps) ** 2 * self.clean.cross_variance(theta)
        if self.cont is not None:
            var = var + self.eps**2 * self.cont.cross_variance(theta)
        k = 1.0 + 1.0 / self.alpha
        return float(k * math.sqrt(var.sum()) / self.model.n)


def population_objective(model, theta0, cont, theta, alpha, mc=None, tol=DEFAULT_TAIL_TOL):
    """H*_{n,alpha}(theta) under the contaminated truth."""
    theta = model.check(theta)
    return Population(model, theta0, cont, alpha, mc, tol).value(theta)


def _minimise(pop, starts, opt):
    model = pop.model
    best = None
    for k, s in enumerate(starts):
        try:
            s = model.check(s)
        except ValueError:
            continue
        theta, val, _ = minimize_internal(pop.value, pop.value_and_grad, model, s, opt, nelder_mead=opt.method == "nelder-mead")
        if not math.isfinite(val):
            continue
        # Lowest objective wins; near-ties go to the earliest start.
        if best is None or val < best[1] - opt.f_tol:
            best = (theta, val)
    return best


def mdpdf(model, theta0, cont, alpha, opt=None, mc=None, extra_starts=(), tol=DEFAULT_TAIL_TOL):
    """T_alpha at the contaminated truth.

    Starts from theta0, the contaminant's parameter, their midpoint, the
    likelihood (alpha = 0) functional and any ``extra_starts`` so that
    every basin is explored.
    """
    opt = opt or OptimizerConfig(n_starts=1)
    pop = Population(model, theta0, cont, alpha, mc, tol)
    theta0 = pop.theta0
    starts = [theta0]
    try:
        tc = model.check(contaminant_parameter(model, cont))
        starts += [tc, 0.5 * (theta0 + tc)]
    except (DomainError, ValueError):
        pass
    if alpha > 0:
        # The likelihood functional sits in the wide-scale basin that
        # small alpha can fall into; neither theta0 nor theta_c reaches it.
        kl = Population(model, theta0, cont, 0.0, mc, tol)
        best_kl = _minimise(kl, [theta0], replace(opt, method="gradient"))
        if best_kl is not None:
            starts.append(best_kl[0])
    starts += [np.asarray(s, dtype=float) for s in extra_starts]
    best = _minimise(pop, starts, opt)
    if best is None:
        return FunctionalResult(theta0, math.nan, cont.eps, alpha, False, math.nan)
    theta, val = best
    _, g = pop.value_and_grad(theta)
    gnorm = float(np.linalg.norm(g * model.internal_scale(theta)))
    return FunctionalResult(theta, val, cont.eps, alpha, gnorm <= opt.stationarity_tol, gnorm)


def cell_seed(base_seed, i_alpha, i_eps):
    """Deterministic per-cell seed derived from the base seed and grid indices."""
    return int(np.random.SeedSequence([int(base_seed), int(i_alpha), int(i_eps)]).generate_state(1)[0])


def _sweep_row(args):
    model, theta0, cont, alpha, ia, eps_grid, opt, mc, base_seed = args
    out = []
    prev = None
    for ie, eps in enumerate(eps_grid):
        cell_mc = replace(mc, seed=cell_seed(base_seed, ia, ie))
        extra = [prev] if prev is not None else []
        try:
            r = mdpdf(model, theta0, cont.with_eps(eps), alpha, opt, cell_mc, extra)
            status = "ok" if r.converged else "not-converged"
        except (ArithmeticError, ValueError) as exc:
            r = FunctionalResult(np.full(model.dim, np.nan), math.nan, eps, alpha, False, math.nan)
            status = f"error: {type(exc).__name__}"
        if np.all(np.isfinite(r.theta_star)):
            prev = r.theta_star
        out.append((r.theta_star, r.objective, status))
    return out


def mdpdf_sweep(model, theta0, cont, alpha_grid, eps_grid, opt=None, mc=None, base_seed=0, threads=1):
    """MDPDF over an (alpha, eps) grid.

    Rows (fixed alpha) run in parallel when ``threads > 1``; within a row
    the previous eps solution is an extra start.  Per-cell failures are
    recorded in the table status rather than raised.
    """
    opt = opt or OptimizerConfig(n_starts=1)
    mc = mc or MonteCarloConfig()
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    eps_grid = np.asarray(eps_grid, dtype=float)
    jobs = [(model, theta0, cont, float(a), ia, eps_grid, opt, mc, base_seed) for ia, a in enumerate(alpha_grid)]
    threads = max(1, min(int(threads), len(jobs), os.cpu_count() or 1))
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    theta = np.array([[c[0] for c in row] for row in rows])
    objective = np.array([[c[1] for c in row] for row in rows])
    status = [[c[2] for c in row] for row in rows]
    return SweepTable(alpha_grid, eps_grid, theta, objective, status, model.param_names)
