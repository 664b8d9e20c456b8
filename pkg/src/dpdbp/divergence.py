"""Density power divergence and the power integrals it is built from.

Three univariate families are supported: Normal, Exponential (mean
parameterisation) and Poisson.  Same-family pairs use closed forms;
mixed continuous pairs fall back to adaptive quadrature and Poisson
quantities are exact sums over a window whose neglected tail mass is
bounded by Bennett's (Chernoff-type) inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate, special

from .errors import DomainError, InvalidParameterError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# Beyond this mean a Poisson sum is replaced by its Gaussian limit; the
# relative error is O(1/mean).
POISSON_EXACT_MAX = 1e7


@dataclass(frozen=True)
class DpdConfig:
    """Tuning parameter plus the numerical tolerances used to honour it."""

    alpha: float = 0.5
    quad_tol: float = 1e-11
    sum_tail_tol: float = 1e-14

    def __post_init__(self):
        if not self.alpha >= 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if not self.quad_tol > 0:
            raise DomainError(f"quad_tol must be > 0, got {self.quad_tol}")
        if not self.sum_tail_tol > 0:
            raise DomainError(f"sum_tail_tol must be > 0, got {self.sum_tail_tol}")


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    discrete = False

    def __post_init__(self):
        if not (math.isfinite(self.mean) and self.sd > 0 and math.isfinite(self.sd)):
            raise InvalidParameterError(f"Normal needs finite mean and sd > 0, got {self}")

    def logpdf(self, y):
        z = (np.asarray(y, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * LOG_2PI

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def window(self, width=15.0):
        return self.mean - width * self.sd, self.mean + width * self.sd


@dataclass(frozen=True)
class Exponential:
    mean: float

    discrete = False

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise InvalidParameterError(f"Exponential needs mean > 0, got {self.mean}")

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        out = -y / self.mean - math.log(self.mean)
        return np.where(y >= 0, out, -np.inf)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def window(self, width=50.0):
        return 0.0, width * self.mean


@dataclass(frozen=True)
class Poisson:
    mean: float

    discrete = True

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise InvalidParameterError(f"Poisson needs mean > 0, got {self.mean}")

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        out = special.xlogy(y, self.mean) - self.mean - special.gammaln(y + 1.0)
        return np.where((y >= 0) & (y == np.floor(y)), out, -np.inf)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def window(self, tol=1e-14):
        lo, hi = poisson_window(self.mean, tol)
        return int(lo), int(hi)


UnivariateDensity = Union[Normal, Exponential, Poisson]


# --------------------------------------------------------------------------
# Auxiliary scalar functions
# --------------------------------------------------------------------------


def q_alpha(eps, alpha):
    """1 - (1 + alpha)/alpha * eps."""
    if not alpha > 0:
        raise DomainError(f"q_alpha needs alpha > 0, got {alpha}")
    return 1.0 - (1.0 + alpha) / alpha * eps


def r_alpha(eps, alpha):
    """q_alpha(eps) + eps**(1 + alpha)/alpha."""
    if not alpha > 0:
        raise DomainError(f"r_alpha needs alpha > 0, got {alpha}")
    return q_alpha(eps, alpha) + eps ** (1.0 + alpha) / alpha


# --------------------------------------------------------------------------
# Poisson sums
# --------------------------------------------------------------------------


def poisson_window(mean, tol, extra=0.0):
    """Integer range [lo, hi] outside of which Poisson(mean) has mass < tol.

    Uses P(X >= m + t) <= exp(-t^2 / (2(m + t/3))) and
    P(X <= m - t) <= exp(-t^2 / (2m)).  ``extra`` inflates the log-bound,
    which is how callers budget for polynomial weights on the summand.
    """
    mean = np.asarray(mean, dtype=float)
    L = math.log(2.0 / tol) + extra
    upper = mean + L / 3.0 + np.sqrt(L * L / 9.0 + 2.0 * L * mean)
    lower = mean - np.sqrt(2.0 * L * mean)
    lo = np.maximum(np.floor(lower), 0.0).astype(np.int64)
    hi = np.ceil(upper).astype(np.int64)
    return lo, hi


def _ragged(lo, hi):
    counts = hi - lo + 1
    offsets = np.cumsum(counts) - counts
    owner = np.repeat(np.arange(len(lo)), counts)
    y = np.arange(int(counts.sum()), dtype=np.int64) - offsets[owner] + lo[owner]
    return owner, y.astype(float), offsets


def poisson_logpmf(y, mean):
    return special.xlogy(y, mean) - mean - special.gammaln(y + 1.0)


def poisson_power_sums(means, alpha, tol=1e-14, with_moment=False):
    """Per-mean sums S0 = sum_y f^{1+alpha}(y) and S1 = sum_y (y - m) f^{1+alpha}(y).

    S1 is only computed when ``with_moment`` is true; it is the building
    block of the score integral for log-link models.
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    s0 = np.empty_like(means)
    s1 = np.zeros_like(means)
    big = means > POISSON_EXACT_MAX
    if big.any():
        m = means[big]
        s0[big] = (2.0 * np.pi * m) ** (-alpha / 2.0) / math.sqrt(1.0 + alpha)
    small = ~big
    if small.any():
        m = means[small]
        extra = float(np.log1p(m.max())) if with_moment else 0.0
        lo, hi = poisson_window(m, tol, extra)
        owner, y, offsets = _ragged(lo, hi)
        mo = m[owner]
        w = np.exp((1.0 + alpha) * poisson_logpmf(y, mo))
        s0[small] = np.add.reduceat(w, offsets)
        if with_moment:
            s1[small] = np.add.reduceat(w * (y - mo), offsets)
    if with_moment:
        return s0, s1
    return s0


def poisson_cross_sums(g_means, f_means, alpha, tol=1e-14, with_moment=False):
    """Exact C = sum_y g(y) f^alpha(y) per pair, with optional
    C1 = sum_y g(y) f^alpha(y) (y - m_f)."""
    g_means = np.atleast_1d(np.asarray(g_means, dtype=float))
    f_means = np.broadcast_to(np.asarray(f_means, dtype=float), g_means.shape)
    c0 = np.empty_like(g_means)
    c1 = np.zeros_like(g_means)
    big = np.maximum(g_means, f_means) > POISSON_EXACT_MAX
    if big.any():
        g, f = g_means[big], f_means[big]
        c0[big] = gaussian_cross_moment(g, np.sqrt(g), f, np.sqrt(f), alpha)
        if with_moment:
            c1[big] = c0[big] * (f * (g - f) / (alpha * g + f))
    small = ~big
    if small.any():
        g, f = g_means[small], f_means[small]
        extra = float(np.log1p(max(g.max(), f.max()))) if with_moment else 0.0
        lo, hi = poisson_window(g, tol, extra)
        owner, y, offsets = _ragged(lo, hi)
        fo = f[owner]
        w = np.exp(poisson_logpmf(y, g[owner]) + alpha * poisson_logpmf(y, fo))
        c0[small] = np.add.reduceat(w, offsets)
        if with_moment:
            c1[small] = np.add.reduceat(w * (y - fo), offsets)
    if with_moment:
        return c0, c1
    return c0


# --------------------------------------------------------------------------
# Closed forms
# --------------------------------------------------------------------------


def gaussian_cross_moment(mu1, sd1, mu2, sd2, alpha):
    """Integral of phi_{mu1,sd1} * phi_{mu2,sd2}^alpha over the real line.

    Vectorised over all arguments.
    """
    mu1, sd1, mu2, sd2 = (np.asarray(a, dtype=float) for a in (mu1, sd1, mu2, sd2))
    if np.any(sd1 <= 0) or np.any(sd2 <= 0):
        raise InvalidParameterError("standard deviations must be positive")
    v = alpha * sd1 * sd1 + sd2 * sd2
    d = mu1 - mu2
    out = (2.0 * np.pi) ** (-alpha / 2.0) * sd2 ** (1.0 - alpha) / np.sqrt(v) * np.exp(
        -alpha * d * d / (2.0 * v)
    )
    return out[()] if out.ndim == 0 else out


def exponential_cross_moment(g_mean, f_mean, alpha):
    """Integral of g * f^alpha for exponential densities with the given means."""
    a = np.asarray(g_mean, dtype=float)
    p = np.asarray(f_mean, dtype=float)
    out = p ** (1.0 - alpha) / (alpha * a + p)
    return out[()] if out.ndim == 0 else out


def power_norm(f: UnivariateDensity, alpha, cfg: DpdConfig | None = None):
    """M_f, the integral of f^{1 + alpha}."""
    if not alpha >= 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    tol = (cfg or DpdConfig()).sum_tail_tol
    if isinstance(f, Normal):
        return (2.0 * math.pi) ** (-alpha / 2.0) / math.sqrt(1.0 + alpha) * f.sd ** (-alpha)
    if isinstance(f, Exponential):
        return 1.0 / ((1.0 + alpha) * f.mean**alpha)
    if isinstance(f, Poisson):
        return float(poisson_power_sums(f.mean, alpha, tol)[0])
    raise TypeError(f"unsupported density {f!r}")


def cross_moment(g: UnivariateDensity, f: UnivariateDensity, alpha, cfg: DpdConfig | None = None):
    """Integral of g * f^alpha."""
    cfg = cfg or DpdConfig()
    if isinstance(g, Normal) and isinstance(f, Normal):
        return float(gaussian_cross_moment(g.mean, g.sd, f.mean, f.sd, alpha))
    if isinstance(g, Exponential) and isinstance(f, Exponential):
        return float(exponential_cross_moment(g.mean, f.mean, alpha))
    _check_same_support(g, f)
    if isinstance(g, Poisson):
        return float(poisson_cross_sums(g.mean, f.mean, alpha, cfg.sum_tail_tol)[0])
    return _quad(lambda y: g.pdf(y) * f.pdf(y) ** alpha, g, f, cfg, "cross term g*f^alpha")


def _check_same_support(g, f):
    if g.discrete != f.discrete:
        raise DomainError(
            f"cannot compare a discrete and a continuous density: {g!r} vs {f!r}"
        )


def _continuous_window(*densities):
    lo, hi = math.inf, -math.inf
    for d in densities:
        a, b = d.window()
        lo, hi = min(lo, a), max(hi, b)
    return lo, hi


def _quad(func, g, f, cfg, term):
    lo, hi = _continuous_window(g, f)
    points = sorted({p for d in (g, f) for p in (d.mean,) if lo < p < hi})

    def checked(y):
        v = float(func(y))
        if not math.isfinite(v):
            raise NumericalError(f"non-finite integrand in {term} at y={y}")
        return v

    val, _ = integrate.quad(
        checked, lo, hi, epsabs=cfg.quad_tol, epsrel=1e-12, limit=500, points=points or None
    )
    return val


def kl_divergence(g: UnivariateDensity, f: UnivariateDensity, cfg: DpdConfig | None = None):
    """d_0(g, f), the Kullback-Leibler divergence."""
    cfg = cfg or DpdConfig()
    if isinstance(g, Normal) and isinstance(f, Normal):
        return (
            math.log(f.sd / g.sd)
            + (g.sd**2 + (g.mean - f.mean) ** 2) / (2.0 * f.sd**2)
            - 0.5
        )
    if isinstance(g, Exponential) and isinstance(f, Exponential):
        r = g.mean / f.mean
        return r - 1.0 - math.log(r)
    _check_same_support(g, f)
    if isinstance(g, Poisson):
        return g.mean * math.log(g.mean / f.mean) - g.mean + f.mean
    if isinstance(f, Exponential) and not isinstance(g, Exponential):
        # g puts mass on y < 0 where f vanishes.
        return math.inf

    def integrand(y):
        gy = g.pdf(y)
        if gy == 0.0:
            return 0.0
        return gy * (g.logpdf(y) - f.logpdf(y))

    return _quad(integrand, g, f, cfg, "KL term g*log(g/f)")


def dpd(g: UnivariateDensity, f: UnivariateDensity, cfg: DpdConfig | None = None):
    """Density power divergence d_alpha(g, f); alpha = 0 gives KL."""
    cfg = cfg or DpdConfig()
    a = cfg.alpha
    if a == 0:
        return kl_divergence(g, f, cfg)
    _check_same_support(g, f)
    terms = {
        "f^(1+alpha)": power_norm(f, a, cfg),
        "f^alpha*g": cross_moment(g, f, a, cfg),
        "g^(1+alpha)": power_norm(g, a, cfg),
    }
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NumericalError(f"non-finite {name} term: {value}")
    return terms["f^(1+alpha)"] - (1.0 + 1.0 / a) * terms["f^alpha*g"] + terms["g^(1+alpha)"] / a
