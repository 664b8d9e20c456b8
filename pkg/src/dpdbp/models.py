"""Fixed-design regression families.

Every family maps a parameter vector ``theta`` to one univariate density
per design row.  The per-observation quantities needed by the objectives
(power integrals, powered densities, scores and their integrals) are
exposed in vectorised form so that the optimisers never loop over rows
in Python.

Parameter layouts:

* ``NormalNLR``: ``(beta_1, ..., beta_k, sigma)``
* ``PoissonLogLink`` and ``ExponentialLogLink``: ``theta`` with
  ``log p_i = x_i' theta``.

Observation indices are zero-based.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .divergence import (
    Exponential,
    Normal,
    Poisson,
    poisson_logpmf,
    poisson_power_sums,
)
from .errors import DomainError, InvalidParameterError

# Linear predictors are clipped here so exp() stays finite during optimiser
# excursions; any such point is far from every optimum.
MAX_LINEAR_PREDICTOR = 700.0


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise DomainError(f"design must be a non-empty (n, p) array, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise DomainError("design contains non-finite entries")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def p(self):
        return self.rows.shape[1]

    def permuted(self, order):
        return DesignMatrix(self.rows[np.asarray(order)])

    def to_csv(self, path, y=None):
        path = Path(path)
        header = [f"x{j + 1}" for j in range(self.p)]
        if y is not None:
            header.append("y")
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, row in enumerate(self.rows):
                vals = [repr(float(v)) for v in row]
                if y is not None:
                    vals.append(repr(float(y[i])))
                w.writerow(vals)

    @classmethod
    def from_csv(cls, path):
        """Read a headered ``x1..xp[,y]`` file; returns ``(design, y or None)``."""
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = [h.strip() for h in next(reader)]
        xcols = [j for j, h in enumerate(header) if h.startswith("x")]
        ycol = header.index("y") if "y" in header else None
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if [header[j] for j in xcols] != expected:
            raise DomainError(f"{path}: covariate columns must be named {expected}, got {header}")
        data = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        if data.size == 0:
            raise DomainError(f"{path}: no data rows")
        y = data[:, ycol] if ycol is not None else None
        return cls(data[:, xcols]), y


def generate_design(columns, n, seed, intercept=False):
    """Draw covariate columns once from a named seed.

    ``columns`` is a list of dicts such as ``{"dist": "normal", "loc": 50,
    "scale": 20}``, ``{"dist": "uniform", "low": 0, "high": 4}`` or
    ``{"dist": "linspace", "start": 0.1, "stop": 80}``.  Columns are drawn
    in order from a single generator.
    """
    rng = np.random.default_rng(seed)
    cols = []
    for spec in columns:
        kind = spec["dist"]
        if kind == "normal":
            cols.append(rng.normal(spec.get("loc", 0.0), spec.get("scale", 1.0), n))
        elif kind == "uniform":
            cols.append(rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), n))
        elif kind == "linspace":
            cols.append(np.linspace(spec["start"], spec["stop"], n))
        else:
            raise DomainError(f"unknown covariate distribution {kind!r}")
    if intercept:
        cols.insert(0, np.ones(n))
    return DesignMatrix(np.column_stack(cols))


# --------------------------------------------------------------------------
# Mean functions for the normal family
# --------------------------------------------------------------------------


class Linear:
    """beta0 + beta1 * x for a single scalar covariate."""

    name = "linear"

    def arity(self, design):
        if design.p != 1:
            raise DomainError(f"linear mean needs one covariate column, got {design.p}")
        return 2

    def positive(self, design):
        return [False, False]

    def value(self, X, beta):
        return beta[0] + beta[1] * X[:, 0]

    def jacobian(self, X, beta):
        return np.column_stack([np.ones(X.shape[0]), X[:, 0]])


class AffineVector:
    """x' beta."""

    name = "affine"

    def arity(self, design):
        return design.p

    def positive(self, design):
        return [False] * design.p

    def value(self, X, beta):
        return X @ beta

    def jacobian(self, X, beta):
        return X


class MichaelisMenten:
    """beta1 * x / (beta2 + x); beta2 must be positive."""

    name = "michaelis-menten"

    def arity(self, design):
        if design.p != 1:
            raise DomainError("Michaelis-Menten mean needs one covariate column")
        if np.any(design.rows[:, 0] < 0):
            raise DomainError("Michaelis-Menten substrate concentrations must be >= 0")
        return 2

    def positive(self, design):
        return [False, True]

    def value(self, X, beta):
        x = X[:, 0]
        return beta[0] * x / (beta[1] + x)

    def jacobian(self, X, beta):
        x = X[:, 0]
        d = beta[1] + x
        return np.column_stack([x / d, -beta[0] * x / (d * d)])


MEAN_FUNCTIONS = {m.name: m for m in (Linear, AffineVector, MichaelisMenten)}


# --------------------------------------------------------------------------
# Families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelFamily:
    design: DesignMatrix

    family = "abstract"
    discrete = False

    @property
    def n(self):
        return self.design.n

    @property
    def dim(self):
        raise NotImplementedError

    @property
    def positive(self):
        """Boolean mask of components constrained to be strictly positive."""
        return np.zeros(self.dim, dtype=bool)

    @property
    def param_names(self):
        return tuple(f"theta_{j + 1}" for j in range(self.dim))

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParameterError(
                f"{self.family}: expected {self.dim} parameters, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise InvalidParameterError(f"{self.family}: non-finite parameter {theta}")
        if np.any(theta[self.positive] <= 0):
            raise InvalidParameterError(
                f"{self.family}: components {np.flatnonzero(self.positive).tolist()} must be > 0, got {theta}"
            )
        return theta

    # Unconstrained coordinates: log for positive components.
    def to_internal(self, theta):
        theta = self.check(theta)
        phi = theta.copy()
        phi[self.positive] = np.log(theta[self.positive])
        return phi

    def from_internal(self, phi):
        theta = np.array(phi, dtype=float)
        theta[self.positive] = np.exp(np.clip(theta[self.positive], -700, 700))
        return theta

    def internal_scale(self, theta):
        """d theta / d phi, componentwise."""
        return np.where(self.positive, theta, 1.0)

    def obs_density(self, i, theta):
        if not 0 <= i < self.n:
            raise IndexError(f"observation index {i} outside [0, {self.n})")
        return self.densities(theta)[i]

    def score(self, i, theta, y):
        if not 0 <= i < self.n:
            raise IndexError(f"observation index {i} outside [0, {self.n})")
        yy = np.full(self.n, float(y))
        self.check_response(yy)
        return self.scores(theta, yy)[i]

    def sample(self, theta, seed):
        return self.sample_rng(theta, np.random.default_rng(seed))

    def power_terms(self, theta, alpha, tol=1e-14):
        """Power integrals M_i and score integrals of u_i f_i^(1+alpha)."""
        return self.power_norms(theta, alpha, tol), self.score_power_integrals(theta, alpha, tol)

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise DomainError(f"expected {self.n} responses, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise DomainError("responses must be finite")
        return y


@dataclass(frozen=True)
class NormalNLR(ModelFamily):
    mean: object = field(default_factory=Linear)

    family = "normal"

    def __post_init__(self):
        self.mean.arity(self.design)

    @property
    def k(self):
        return self.mean.arity(self.design)

    @property
    def dim(self):
        return self.k + 1

    @property
    def positive(self):
        return np.array(self.mean.positive(self.design) + [True])

    @property
    def param_names(self):
        if isinstance(self.mean, Linear):
            return ("beta0", "beta1", "sigma")
        return tuple(f"beta{j + 1}" for j in range(self.k)) + ("sigma",)

    def mu(self, theta):
        return self.mean.value(self.design.rows, theta[:-1])

    def location(self, theta):
        return self.mu(self.check(theta))

    def densities(self, theta):
        theta = self.check(theta)
        return [Normal(float(m), float(theta[-1])) for m in self.mu(theta)]

    def logpdf(self, theta, y):
        mu, s = self.mu(theta), theta[-1]
        z = (y - mu) / s
        return -0.5 * z * z - math.log(s) - 0.5 * math.log(2 * math.pi)

    def pdf_powers(self, theta, y, alpha):
        return np.exp(alpha * self.logpdf(theta, y))

    def power_norms(self, theta, alpha, tol=None):
        s = theta[-1]
        m = (2 * math.pi) ** (-alpha / 2) / math.sqrt(1 + alpha) * s ** (-alpha)
        return np.full(self.n, m)

    def scores(self, theta, y):
        beta, s = theta[:-1], theta[-1]
        r = y - self.mean.value(self.design.rows, beta)
        J = self.mean.jacobian(self.design.rows, beta)
        return np.column_stack([J * (r / s**2)[:, None], -1.0 / s + r * r / s**3])

    def score_power_integrals(self, theta, alpha, tol=None):
        s = theta[-1]
        m = self.power_norms(theta, alpha)
        out = np.zeros((self.n, self.dim))
        out[:, -1] = -m * alpha / ((1 + alpha) * s)
        return out

    def sample_rng(self, theta, rng):
        theta = self.check(theta)
        return self.mu(theta) + theta[-1] * rng.standard_normal(self.n)


@dataclass(frozen=True)
class _LogLink(ModelFamily):
    @property
    def dim(self):
        return self.design.p

    def rate(self, theta):
        eta = np.clip(self.design.rows @ theta, -MAX_LINEAR_PREDICTOR, MAX_LINEAR_PREDICTOR)
        return np.exp(eta)

    def location(self, theta):
        return self.rate(self.check(theta))


@dataclass(frozen=True)
class PoissonLogLink(_LogLink):
    family = "poisson"
    discrete = True

    def densities(self, theta):
        return [Poisson(float(p)) for p in self.rate(self.check(theta))]

    def check_response(self, y):
        y = super().check_response(y)
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise DomainError("Poisson responses must be non-negative integers")
        return y

    def logpdf(self, theta, y):
        return poisson_logpmf(y, self.rate(theta))

    def pdf_powers(self, theta, y, alpha):
        return np.exp(alpha * self.logpdf(theta, y))

    def power_norms(self, theta, alpha, tol=1e-14):
        return poisson_power_sums(self.rate(theta), alpha, tol)

    def scores(self, theta, y):
        return (y - self.rate(theta))[:, None] * self.design.rows

    def score_power_integrals(self, theta, alpha, tol=1e-14):
        return self.power_terms(theta, alpha, tol)[1]

    def power_terms(self, theta, alpha, tol=1e-14):
        s0, s1 = poisson_power_sums(self.rate(theta), alpha, tol, with_moment=True)
        return s0, s1[:, None] * self.design.rows

    def sample_rng(self, theta, rng):
        return rng.poisson(self.rate(self.check(theta))).astype(float)


@dataclass(frozen=True)
class ExponentialLogLink(_LogLink):
    family = "exponential"

    def densities(self, theta):
        return [Exponential(float(p)) for p in self.rate(self.check(theta))]

    def check_response(self, y):
        y = super().check_response(y)
        if np.any(y < 0):
            raise DomainError("exponential responses must be non-negative")
        return y

    def logpdf(self, theta, y):
        p = self.rate(theta)
        return -y / p - np.log(p)

    def pdf_powers(self, theta, y, alpha):
        return np.exp(alpha * self.logpdf(theta, y))

    def power_norms(self, theta, alpha, tol=None):
        return self.rate(theta) ** (-alpha) / (1 + alpha)

    def scores(self, theta, y):
        return (y / self.rate(theta) - 1.0)[:, None] * self.design.rows

    def score_power_integrals(self, theta, alpha, tol=None):
        p = self.rate(theta)
        return (-alpha * p ** (-alpha) / (1 + alpha) ** 2)[:, None] * self.design.rows

    def sample_rng(self, theta, rng):
        return rng.exponential(self.rate(self.check(theta)))

