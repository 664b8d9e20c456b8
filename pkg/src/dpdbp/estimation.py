"""Minimum density power divergence estimation for fixed-design models."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .models import AffineVector, ExponentialLogLink, Linear, MichaelisMenten, NormalNLR, PoissonLogLink

DEFAULT_TAIL_TOL = 1e-14


@dataclass(frozen=True)
class OptimizerConfig:
    """Multi-start settings.

    ``stationarity_tol`` is per observation: a fit is declared converged
    when ``||estimating_equation|| <= stationarity_tol * n``.
    """

    n_starts: int = 10
    max_iters: int = 4000
    x_tol: float = 1e-8
    f_tol: float = 1e-10
    stationarity_tol: float = 1e-5
    start_dispersion: float = 0.5
    seed: int = 0
    polish: bool = True
    # "nelder-mead" runs the simplex then a BFGS polish; "gradient" runs
    # BFGS only, which is much cheaper for large simulation grids.
    method: str = "nelder-mead"

    def __post_init__(self):
        if self.n_starts < 1 or self.max_iters < 1:
            raise ValueError("n_starts and max_iters must be positive")
        if self.method not in ("nelder-mead", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")
        for name in ("x_tol", "f_tol", "stationarity_tol", "start_dispersion"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    objective: float
    ee_residual_norm: float
    converged: bool
    n_restarts_used: int
    iterations: int
    start_objectives: tuple = field(default=(), repr=False)


# --------------------------------------------------------------------------
# Objective, gradient and estimating equation
# --------------------------------------------------------------------------


def _objective(model, y, theta, alpha, tol):
    if alpha == 0:
        return 1.0 - float(np.mean(model.logpdf(theta, y)))
    m = model.power_norms(theta, alpha, tol)
    logf = model.logpdf(theta, y)
    # -(1 + 1/a) f^a + 1/a == -f^a - expm1(a log f)/a, stable for small a
    terms = m - np.exp(alpha * logf) - np.expm1(alpha * logf) / alpha
    return float(np.mean(terms))


def _ee(model, y, theta, alpha, tol):
    u = model.scores(theta, y)
    if alpha == 0:
        return u.sum(axis=0)
    w = model.pdf_powers(theta, y, alpha)
    return (u * w[:, None]).sum(axis=0) - model.score_power_integrals(theta, alpha, tol).sum(axis=0)


def _gradient(model, y, theta, alpha, tol):
    return -(1.0 + alpha) / model.n * _ee(model, y, theta, alpha, tol)


def _value_and_grad(model, y, theta, alpha, tol):
    """Objective and gradient sharing one pass over the per-row terms."""
    logf = model.logpdf(theta, y)
    u = model.scores(theta, y)
    if alpha == 0:
        return 1.0 - float(np.mean(logf)), -u.mean(axis=0)
    m, su = model.power_terms(theta, alpha, tol)
    fa = np.exp(alpha * logf)
    value = float(np.mean(m - fa - np.expm1(alpha * logf) / alpha))
    ee = (u * fa[:, None]).sum(axis=0) - su.sum(axis=0)
    return value, -(1.0 + alpha) / model.n * ee


def empirical_objective(model, y, theta, alpha, tol=DEFAULT_TAIL_TOL):
    """H_{n,alpha}(theta); at alpha = 0 returns 1 - mean log-likelihood."""
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    theta = model.check(theta)
    y = model.check_response(y)
    return _objective(model, y, theta, alpha, tol)


def estimating_equation(model, y, theta, alpha, tol=DEFAULT_TAIL_TOL):
    """sum_i [u_i(y_i) f_i^alpha(y_i) - integral of u_i f_i^(1+alpha)].

    Equals ``-n / (1 + alpha)`` times the gradient of the objective.
    """
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    theta = model.check(theta)
    y = model.check_response(y)
    return _ee(model, y, theta, alpha, tol)


# --------------------------------------------------------------------------
# Starting values
# --------------------------------------------------------------------------


def _mad_scale(r):
    s = 1.4826 * np.median(np.abs(r - np.median(r)))
    if not s > 0:
        s = np.std(r)
    return max(float(s), 1e-6 * (1.0 + float(np.max(np.abs(r)))), 1e-8)


def repeated_median_line(x, y):
    """Siegel's repeated-median intercept and slope."""
    n = len(x)
    if n == 1:
        return float(y[0]), 0.0
    dx = x[None, :] - x[:, None]
    dy = y[None, :] - y[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = dy / dx
    s[~np.isfinite(s)] = np.nan
    np.fill_diagonal(s, np.nan)
    inner = np.nanmedian(s, axis=1)
    inner = inner[np.isfinite(inner)]
    slope = float(np.median(inner)) if inner.size else 0.0
    return float(np.median(y - slope * x)), slope


def l1_regression(X, z):
    """Least absolute deviations fit of z on the columns of X."""
    n, p = X.shape
    c = np.concatenate([np.zeros(p), np.ones(2 * n)])
    A = np.hstack([X, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = optimize.linprog(c, A_eq=A, b_eq=z, bounds=bounds, method="highs")
    if res.status == 0:
        return res.x[:p]
    return np.linalg.lstsq(X, z, rcond=None)[0]


def robust_start(model, y):
    """Median-based initial estimate, cheap and insensitive to a minority of outliers."""
    X = model.design.rows
    if isinstance(model, NormalNLR):
        if isinstance(model.mean, Linear):
            beta = np.array(repeated_median_line(X[:, 0], y))
        elif isinstance(model.mean, MichaelisMenten):
            beta = _mm_start(X[:, 0], y)
        else:
            beta = l1_regression(X, y)
        sigma = _mad_scale(y - model.mean.value(X, beta))
        return np.append(beta, sigma)
    if isinstance(model, PoissonLogLink):
        return l1_regression(X, np.log(y + 0.5))
    if isinstance(model, ExponentialLogLink):
        return l1_regression(X, np.log(np.maximum(y, 1e-300) / math.log(2.0)))
    raise TypeError(f"no robust start for {type(model).__name__}")


def _weighted_median(values, weights):
    order = np.argsort(values)
    cw = np.cumsum(weights[order])
    return float(values[order][np.searchsorted(cw, 0.5 * cw[-1])])


def _mm_start(x, y):
    keep = x > 0
    x, y = x[keep], y[keep]
    if x.size == 0:
        return np.array([0.0, 1.0])
    best = None
    for b2 in np.geomspace(1e-3 * max(x.min(), 1e-3), 1e3 * x.max(), 121):
        z = x / (b2 + x)
        b1 = _weighted_median(y / z, z)
        loss = np.abs(y - b1 * z).sum()
        if best is None or loss < best[0]:
            best = (loss, b1, b2)
    return np.array(best[1:])


def likelihood_start(model, y, start):
    """Maximum likelihood estimate (alpha = 0), used as one of the starts."""
    X = model.design.rows
    if isinstance(model, NormalNLR) and isinstance(model.mean, (Linear, AffineVector)):
        J = model.mean.jacobian(X, None)
        beta = np.linalg.lstsq(J, y, rcond=None)[0]
        r = y - J @ beta
        sigma = max(math.sqrt(float(np.mean(r * r))), 1e-8)
        return np.append(beta, sigma)
    res = _local_fit(model, y, start, 0.0, OptimizerConfig(n_starts=1), DEFAULT_TAIL_TOL, nelder_mead=False)
    return res[0] if res is not None else None


# --------------------------------------------------------------------------
# Local and multi-start minimisation
# --------------------------------------------------------------------------


def minimize_internal(fun, fun_grad, model, start, opt, nelder_mead=True):
    """Minimise ``fun(theta)`` over the model's unconstrained coordinates.

    ``fun_grad(theta)`` returns ``(value, gradient)`` and drives the BFGS
    polish (or the whole search when ``nelder_mead`` is false).  Returns
    ``(theta, value, iterations)``; non-finite values are treated as +inf
    so the simplex steps away from them.
    """

    def f_phi(phi):
        theta = model.from_internal(phi)
        try:
            v = fun(theta)
        except (ValueError, ArithmeticError):
            return math.inf
        return v if math.isfinite(v) else math.inf

    def fg_phi(phi):
        theta = model.from_internal(phi)
        try:
            v, g = fun_grad(theta)
        except (ValueError, ArithmeticError):
            return math.inf, np.zeros_like(phi)
        g = g * model.internal_scale(theta)
        if not (math.isfinite(v) and np.all(np.isfinite(g))):
            return math.inf, np.zeros_like(phi)
        return v, g

    phi = model.to_internal(start)
    best_phi, best_val, iters = phi, f_phi(phi), 0
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if nelder_mead:
            res = optimize.minimize(
                f_phi,
                phi,
                method="Nelder-Mead",
                options={
                    "xatol": opt.x_tol,
                    "fatol": opt.f_tol,
                    "maxiter": opt.max_iters,
                    "maxfev": 2 * opt.max_iters,
                    "adaptive": len(phi) > 2,
                },
            )
            iters += int(res.nit)
            if res.fun <= best_val:
                best_phi, best_val = res.x, float(res.fun)
        if (opt.polish or not nelder_mead) and math.isfinite(best_val) and fun_grad is not None:
            res = optimize.minimize(
                fg_phi,
                best_phi,
                jac=True,
                method="BFGS",
                options={"gtol": 1e-3 * opt.stationarity_tol, "maxiter": 200 if nelder_mead else opt.max_iters},
            )
            iters += int(res.nit)
            if np.all(np.isfinite(res.x)) and res.fun <= best_val:
                best_phi, best_val = res.x, float(res.fun)
    return model.from_internal(best_phi), best_val, iters


def _local_fit(model, y, start, alpha, opt, tol, nelder_mead=None):
    if nelder_mead is None:
        nelder_mead = opt.method == "nelder-mead"
    try:
        theta, val, iters = minimize_internal(
            lambda t: _objective(model, y, t, alpha, tol),
            lambda t: _value_and_grad(model, y, t, alpha, tol),
            model,
            start,
            opt,
            nelder_mead=nelder_mead,
        )
    except (ValueError, ArithmeticError):
        return None
    if not math.isfinite(val):
        return None
    return theta, val, iters


def select_best(candidates, f_tol, center):
    """Pick the lowest objective; near-ties go to the candidate closest to
    ``center`` and then to the lowest start index.

    ``candidates`` is a list of ``(theta, value)``; returns the winning index.
    """
    values = np.array([v for _, v in candidates])
    best = values.min()
    tied = [k for k, v in enumerate(values) if v <= best + f_tol]
    return min(tied, key=lambda k: (float(np.linalg.norm(candidates[k][0] - center)), k))


def mdpde_fit(model, y, alpha, opt=None, init=None, tol=DEFAULT_TAIL_TOL):
    """Minimum DPD estimate of theta.

    Starts: ``init`` (or a robust median-based estimate), the maximum
    likelihood estimate, and random dispersions around the first start.
    Each start runs Nelder-Mead followed by a gradient polish that drives
    the estimating equation to zero.
    """
    opt = opt or OptimizerConfig()
    y = model.check_response(y)
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")

    with np.errstate(all="ignore"):
        center = model.check(init) if init is not None else robust_start(model, y)
        starts = [center]
        if opt.n_starts > 1:
            mle = likelihood_start(model, y, center)
            if mle is not None and np.all(np.isfinite(mle)):
                starts.append(model.check(mle))
        rng = np.random.default_rng(opt.seed)
        phi0 = model.to_internal(center)
        scale = opt.start_dispersion * np.maximum(np.abs(phi0), 1.0)
        while len(starts) < opt.n_starts:
            starts.append(model.from_internal(phi0 + scale * rng.standard_normal(model.dim)))

    start_objectives = []
    candidates = []
    iterations = 0
    for s in starts:
        with np.errstate(all="ignore"):
            start_objectives.append(_objective(model, y, s, alpha, tol))
        res = _local_fit(model, y, s, alpha, opt, tol)
        if res is None:
            continue
        theta, val, it = res
        iterations += it
        candidates.append((theta, val))

    if not candidates:
        return FitResult(center, math.nan, math.nan, False, len(starts), iterations, tuple(start_objectives))

    k = select_best(candidates, opt.f_tol, center)
    theta, val = candidates[k]
    with np.errstate(all="ignore"):
        ee_norm = float(np.linalg.norm(_ee(model, y, theta, alpha, tol)))
    converged = math.isfinite(ee_norm) and ee_norm <= opt.stationarity_tol * model.n
    return FitResult(theta, val, ee_norm, converged, len(starts), iterations, tuple(start_objectives))
