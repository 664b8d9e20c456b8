import math

import numpy as np
import pytest
from scipy import integrate

from dpdbp.breakdown import basin_distances
from dpdbp.errors import ConfigError, DomainError
from dpdbp.estimation import OptimizerConfig
from dpdbp.functional import (
    ContaminationScheme,
    MonteCarloConfig,
    Population,
    cell_seed,
    contaminant_parameter,
    mdpdf,
    mdpdf_sweep,
    population_objective,
)

from conftest import (
    EXP_CONT,
    EXP_THETA0,
    MM_CONT,
    MM_THETA0,
    POIS_THETA0,
    SLR_CONT,
    SLR_THETA0,
    exponential_model,
    mm_model,
    poisson_model,
    slr_model,
)

FAST = OptimizerConfig(n_starts=1, method="gradient")


def quadrature_objective(model, theta0, cont, theta, alpha):
    """Mean over rows of the three defining integrals, each by adaptive quadrature."""
    fs = model.densities(theta)
    gs = model.densities(theta0)
    ks = cont.densities()
    eps = cont.eps
    total = 0.0
    for f, g, k in zip(fs, gs, ks):
        if model.family == "normal":
            lo = min(d.mean - 14 * d.sd for d in (f, g, k))
            hi = max(d.mean + 14 * d.sd for d in (f, g, k))
            knots = [lo, *sorted({f.mean, g.mean, k.mean}), hi]
        else:
            # the scales can differ by orders of magnitude: split at multiples
            # of every decay length (f**alpha decays on f.mean / alpha)
            scales = [f.mean, g.mean, k.mean, f.mean / alpha]
            knots = sorted({0.0, *(c * m for m in scales for c in (1, 5, 50))}) + [np.inf]
        M = segments(lambda y: f.pdf(y) ** (1 + alpha), knots)
        cg = segments(lambda y: f.pdf(y) ** alpha * g.pdf(y), knots)
        ck = segments(lambda y: f.pdf(y) ** alpha * k.pdf(y), knots)
        total += M - (1 + 1 / alpha) * ((1 - eps) * cg + eps * ck) + 1 / alpha
    return total / model.n


def segments(fun, knots):
    return sum(integrate.quad(fun, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0] for a, b in zip(knots, knots[1:]))


def fd_grad(fun, theta, h=1e-6):
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h * max(1.0, abs(theta[j]))
        g[j] = (fun(theta + e) - fun(theta - e)) / (2 * e[j])
    return g


class TestContaminationScheme:
    def test_eps_range(self, slr):
        with pytest.raises(DomainError):
            ContaminationScheme.from_model(slr, SLR_CONT, 1.0)

    def test_normal_needs_sds(self):
        with pytest.raises(DomainError):
            ContaminationScheme(0.1, "normal", np.zeros(3))

    def test_positive_means(self):
        with pytest.raises(DomainError):
            ContaminationScheme(0.1, "poisson", np.array([1.0, -1.0]))

    def test_linear_mean(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.2)
        np.testing.assert_allclose(cont.means, 3 + 2 * pois.design.rows[:, 1])
        assert cont.theta is None

    def test_with_eps(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.1).with_eps(0.3)
        assert cont.eps == 0.3
        np.testing.assert_array_equal(cont.theta, SLR_CONT)


class TestMonteCarloConfig:
    def test_zero_draws_is_config_error(self):
        with pytest.raises(ConfigError) as info:
            MonteCarloConfig(n_draws=0)
        assert info.value.key == "monte_carlo.n_draws"

    def test_exact_mode_ignores_draws(self):
        assert MonteCarloConfig(n_draws=0, mode="exact").mode == "exact"


class TestPopulationObjective:
    def test_normal_against_quadrature(self):
        model = slr_model(n=4)
        rng = np.random.default_rng(3)
        for _ in range(20):
            theta = np.array([rng.normal(40, 8), rng.normal(1.5, 0.5), rng.uniform(0.3, 5)])
            eps = rng.uniform(0, 0.9)
            alpha = rng.uniform(0.05, 1)
            cont = ContaminationScheme.from_model(model, SLR_CONT, eps)
            exact = population_objective(model, SLR_THETA0, cont, theta, alpha)
            assert exact == pytest.approx(quadrature_objective(model, SLR_THETA0, cont, theta, alpha), abs=1e-8)

    def test_michaelis_menten_against_quadrature(self):
        model = mm_model(n=4)
        cont = ContaminationScheme.from_model(model, MM_CONT, 0.35)
        theta = np.array([6.0, 2.5, 0.8])
        exact = population_objective(model, MM_THETA0, cont, theta, 0.3)
        assert exact == pytest.approx(quadrature_objective(model, MM_THETA0, cont, theta, 0.3), abs=1e-8)

    def test_exponential_example(self):
        model = exponential_model(n=5)
        cont = ContaminationScheme.from_model(model, EXP_CONT, 0.3)
        exact = population_objective(model, EXP_THETA0, cont, EXP_THETA0, 0.5)
        assert exact == pytest.approx(quadrature_objective(model, EXP_THETA0, cont, EXP_THETA0, 0.5), abs=1e-8)

    def test_exponential_randomised(self):
        model = exponential_model(n=3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            theta = rng.uniform(-0.5, 1.0, 2)
            cont = ContaminationScheme.from_model(model, EXP_CONT, rng.uniform(0, 0.9))
            alpha = rng.uniform(0.05, 1)
            exact = population_objective(model, EXP_THETA0, cont, theta, alpha)
            assert exact == pytest.approx(quadrature_objective(model, EXP_THETA0, cont, theta, alpha), abs=1e-8)

    def test_poisson_exact_against_sum(self):
        from scipy import stats

        model = poisson_model(n=5)
        cont = ContaminationScheme.linear_mean(model, [3, 2], 0.3)
        theta, alpha = np.array([0.8, 1.1]), 0.5
        exact = population_objective(model, POIS_THETA0, cont, theta, alpha, MonteCarloConfig(mode="exact"))
        y = np.arange(0, 400)
        total = 0.0
        for f, g, k in zip(model.densities(theta), model.densities(POIS_THETA0), cont.densities()):
            pf = stats.poisson.pmf(y, f.mean)
            mix = 0.7 * stats.poisson.pmf(y, g.mean) + 0.3 * stats.poisson.pmf(y, k.mean)
            total += np.sum(pf ** (1 + alpha)) - 3 * np.sum(pf**alpha * mix) + 2
        assert exact == pytest.approx(total / model.n, abs=1e-12)

    @pytest.mark.parametrize("eps", [0.0, 0.3])
    def test_monte_carlo_doubling(self, pois, eps):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], eps)
        theta = np.array([0.9, 1.05])
        a = Population(pois, POIS_THETA0, cont, 0.5, MonteCarloConfig(20_000, 1))
        b = Population(pois, POIS_THETA0, cont, 0.5, MonteCarloConfig(40_000, 2))
        se = math.hypot(a.standard_error(theta), b.standard_error(theta))
        assert abs(a.value(theta) - b.value(theta)) < 3 * se

    def test_monte_carlo_close_to_exact(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.3)
        theta = np.array([0.9, 1.05])
        mc = Population(pois, POIS_THETA0, cont, 0.5, MonteCarloConfig(20_000, 3))
        exact = Population(pois, POIS_THETA0, cont, 0.5, MonteCarloConfig(mode="exact"))
        assert abs(mc.value(theta) - exact.value(theta)) < 4 * mc.standard_error(theta)

    def test_monte_carlo_common_random_numbers(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.3)
        pop = Population(pois, POIS_THETA0, cont, 0.5, MonteCarloConfig(2000, 3))
        assert pop.value([1.0, 1.0]) == pop.value([1.0, 1.0])

    @pytest.mark.parametrize(
        "make,theta0,cont_rule,theta",
        [
            (lambda: slr_model(n=6), SLR_THETA0, ("model", SLR_CONT), [37.0, 1.2, 2.0]),
            (lambda: mm_model(n=6), MM_THETA0, ("model", MM_CONT), [7.0, 2.5, 0.7]),
            (lambda: exponential_model(n=6), EXP_THETA0, ("model", EXP_CONT), [0.7, 0.3]),
            (lambda: poisson_model(n=6), POIS_THETA0, ("linear", [3, 2]), [0.9, 1.2]),
        ],
        ids=["slr", "mm", "exponential", "poisson"],
    )
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_gradient_matches_finite_differences(self, make, theta0, cont_rule, theta, alpha):
        model = make()
        if cont_rule[0] == "model":
            cont = ContaminationScheme.from_model(model, cont_rule[1], 0.25)
        else:
            cont = ContaminationScheme.linear_mean(model, cont_rule[1], 0.25)
        pop = Population(model, theta0, cont, alpha, MonteCarloConfig(5000, 1))
        theta = np.array(theta)
        _, g = pop.value_and_grad(theta)
        np.testing.assert_allclose(g, fd_grad(pop.value, theta), rtol=1e-5, atol=1e-9)

    def test_fisher_consistency_on_grid(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.0)
        pop = Population(slr, SLR_THETA0, cont, 0.5)
        h0 = pop.value(SLR_THETA0)
        for d0 in (-0.5, 0, 0.5):
            for d1 in (-0.02, 0, 0.02):
                for ds in (-0.2, 0, 0.2):
                    assert h0 <= pop.value(SLR_THETA0 + np.array([d0, d1, ds])) + 1e-15

    def test_lower_bound_guard(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.3)
        for alpha in (0.05, 0.5, 1.0):
            assert population_objective(slr, SLR_THETA0, cont, [40, 1.5, 3.0], alpha) >= -1e-12 * slr.n / alpha


class TestContaminantParameter:
    def test_in_family(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.2)
        np.testing.assert_array_equal(contaminant_parameter(slr, cont), SLR_CONT)

    def test_poisson_projection_solves_score_equation(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.2)
        t = contaminant_parameter(pois, cont)
        X = pois.design.rows
        np.testing.assert_allclose(X.T @ (np.exp(X @ t) - cont.means), 0.0, atol=1e-8 * np.abs(X.T @ cont.means).max())

    def test_exponential_projection_of_family_member(self, expo):
        cont = ContaminationScheme(0.2, "exponential", expo.location(EXP_CONT))
        np.testing.assert_allclose(contaminant_parameter(expo, cont), EXP_CONT, atol=1e-6)


class TestMdpdf:
    @pytest.mark.parametrize("alpha", [0.05, 0.5, 1.0])
    @pytest.mark.parametrize(
        "make,theta0,cont_theta",
        [(slr_model, SLR_THETA0, SLR_CONT), (mm_model, MM_THETA0, MM_CONT), (exponential_model, EXP_THETA0, EXP_CONT)],
        ids=["slr", "mm", "exponential"],
    )
    def test_fisher_consistency(self, make, theta0, cont_theta, alpha):
        model = make()
        cont = ContaminationScheme.from_model(model, cont_theta, 0.0)
        r = mdpdf(model, theta0, cont, alpha, FAST)
        np.testing.assert_allclose(r.theta_star, theta0, atol=1e-4)

    def test_fisher_consistency_poisson_exact(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.0)
        r = mdpdf(pois, POIS_THETA0, cont, 0.5, FAST, MonteCarloConfig(mode="exact"))
        np.testing.assert_allclose(r.theta_star, POIS_THETA0, atol=1e-4)

    def test_slr_alpha_one_stays_in_clean_basin(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.40)
        r = mdpdf(slr, SLR_THETA0, cont, 1.0, FAST)
        assert abs(r.theta_star[0] - 35) < abs(r.theta_star[0] - 50)
        d0, dc = basin_distances(r.theta_star[None], SLR_THETA0, SLR_CONT)
        assert d0[0] < dc[0] and d0[0] < 1

    def test_slr_small_alpha_breaks_down(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.49)
        r = mdpdf(slr, SLR_THETA0, cont, 0.05, FAST)
        d0, dc = basin_distances(r.theta_star[None], SLR_THETA0, SLR_CONT)
        # breakdown here is the scale exploding, which leaves the clean basin
        assert d0[0] > 1 and r.theta_star[2] > 10

    def test_poisson_stays_in_clean_basin(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.3)
        r = mdpdf(pois, POIS_THETA0, cont, 0.5, FAST, MonteCarloConfig(20_000, 1))
        tc = contaminant_parameter(pois, cont)
        d0, dc = basin_distances(r.theta_star[None], POIS_THETA0, tc)
        assert d0[0] < dc[0]

    def test_mle_drift_is_monotone(self, slr):
        dist = []
        for eps in (0.0, 0.05, 0.1, 0.15, 0.2, 0.25):
            r = mdpdf(slr, SLR_THETA0, ContaminationScheme.from_model(slr, SLR_CONT, eps), 0.01, FAST)
            dist.append(np.linalg.norm(r.theta_star - SLR_THETA0))
        assert np.all(np.diff(dist) >= -1e-8)

    def test_converged_flag(self, slr):
        r = mdpdf(slr, SLR_THETA0, ContaminationScheme.from_model(slr, SLR_CONT, 0.2), 0.5, FAST)
        assert r.converged and r.grad_norm <= FAST.stationarity_tol


class TestSweep:
    def test_cell_seed(self):
        assert cell_seed(1, 2, 3) == cell_seed(1, 2, 3)
        assert len({cell_seed(1, a, e) for a in range(5) for e in range(5)}) == 25

    def test_single_zero_eps(self, slr):
        table = mdpdf_sweep(slr, SLR_THETA0, ContaminationScheme.from_model(slr, SLR_CONT, 0.0), [0.5], [0.0], FAST)
        assert table.theta.shape == (1, 1, 3)
        np.testing.assert_allclose(table.theta[0, 0], SLR_THETA0, atol=1e-4)
        assert table.status == [["ok"]]

    def test_deterministic_poisson(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.0)
        args = (pois, POIS_THETA0, cont, [0.1, 0.5], [0.0, 0.2, 0.4], FAST, MonteCarloConfig(2000, 5))
        a, b = mdpdf_sweep(*args, base_seed=9), mdpdf_sweep(*args, base_seed=9)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_threads_match_serial(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.0)
        args = (slr, SLR_THETA0, cont, [0.1, 0.5], [0.0, 0.3], FAST)
        np.testing.assert_array_equal(mdpdf_sweep(*args, threads=1).theta, mdpdf_sweep(*args, threads=2).theta)
