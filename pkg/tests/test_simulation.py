import math

import numpy as np
import pytest

from dpdbp.errors import DomainError
from dpdbp.estimation import OptimizerConfig
from dpdbp.functional import ContaminationScheme
from dpdbp.simulation import (
    ReplicateSummary,
    SimulationPlan,
    read_summary_csv,
    run_simulation,
    sample_contaminated,
)

from conftest import POIS_THETA0, SLR_CONT, SLR_THETA0, poisson_model, slr_model


def median_se(summary):
    """Interquartile-scaled Monte-Carlo standard error of the median."""
    q25, _, q75 = summary.quantiles()
    R = summary.estimates.shape[2]
    return 1.2533 * (q75 - q25) / 1.349 / math.sqrt(R)


@pytest.fixture(scope="module")
def slr_plan():
    model = slr_model()
    return SimulationPlan(
        model, SLR_THETA0, ContaminationScheme.from_model(model, SLR_CONT, 0.0), (0.0, 0.5), (0.0, 0.2), n_reps=40, base_seed=3
    )


@pytest.fixture(scope="module")
def slr_summary(slr_plan):
    return run_simulation(slr_plan)


class TestSampling:
    def test_eps_zero_matches_model_sample(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.0)
        np.testing.assert_array_equal(sample_contaminated(slr, SLR_THETA0, cont, 0.0, 17), slr.sample(SLR_THETA0, 17))

    def test_deterministic(self, pois):
        cont = ContaminationScheme.linear_mean(pois, [3, 2], 0.0)
        a = sample_contaminated(pois, POIS_THETA0, cont, 0.3, 5)
        np.testing.assert_array_equal(a, sample_contaminated(pois, POIS_THETA0, cont, 0.3, 5))

    def test_flag_fraction(self):
        # contaminants at a far mean make the flags identifiable from y
        model = slr_model(n=100_000, seed=1)
        cont = ContaminationScheme(0.0, "normal", np.full(model.n, 1e6), np.ones(model.n))
        eps = 0.999
        y = sample_contaminated(model, SLR_THETA0, cont, eps, 2)
        frac = np.mean(y > 1e5)
        assert abs(frac - eps) < 4 * math.sqrt(eps * (1 - eps) / model.n)

    def test_poisson_contaminated_subsample_mean(self):
        # one design point repeated, so the contaminant mean is 3 + 2x exactly
        from dpdbp.models import DesignMatrix, PoissonLogLink

        x = 1.5
        model = PoissonLogLink(DesignMatrix(np.tile([1.0, x], (100_000, 1))))
        cont = ContaminationScheme.linear_mean(model, [3, 2], 0.0)
        rng = np.random.default_rng(9)
        y_clean = model.sample_rng(POIS_THETA0, np.random.default_rng(9))
        y = sample_contaminated(model, POIS_THETA0, cont, 0.3, rng)
        # replay the generator to recover the flags
        rng = np.random.default_rng(9)
        model.sample_rng(POIS_THETA0, rng)
        flags = rng.random(model.n) < 0.3
        np.testing.assert_array_equal(y[~flags], y_clean[~flags])
        sub = y[flags]
        m = 3 + 2 * x
        assert abs(sub.mean() - m) < 4 * math.sqrt(m / sub.size)

    def test_fixed_count(self, slr):
        cont = ContaminationScheme(0.0, "normal", np.full(slr.n, 1e6), np.ones(slr.n))
        y = sample_contaminated(slr, SLR_THETA0, cont, 0.25, 4, fixed_count=True)
        assert np.sum(y > 1e5) == 5

    def test_eps_range(self, slr):
        cont = ContaminationScheme.from_model(slr, SLR_CONT, 0.0)
        with pytest.raises(DomainError):
            sample_contaminated(slr, SLR_THETA0, cont, 1.0, 0)


class TestPlan:
    @pytest.mark.parametrize(
        "kwargs", [dict(n_reps=0), dict(alpha_grid=(1.5,)), dict(eps_grid=(1.0,)), dict(eps_grid=())]
    )
    def test_validation(self, slr, kwargs):
        base = dict(
            model=slr,
            theta0=SLR_THETA0,
            cont=ContaminationScheme.from_model(slr, SLR_CONT, 0.0),
            alpha_grid=(0.5,),
            eps_grid=(0.0,),
        )
        base.update(kwargs)
        with pytest.raises(DomainError):
            SimulationPlan(**base)


class TestRun:
    def test_quantile_ordering(self, slr_summary):
        q25, med, q75 = slr_summary.quantiles()
        assert np.all(q25 <= med) and np.all(med <= q75)

    def test_clean_cells_centred(self, slr_summary):
        _, med, _ = slr_summary.quantiles()
        se = median_se(slr_summary)
        # sigma's median is biased low by O(1/n) at n = 20, so check the mean coordinates
        assert np.all(np.abs(med[:, 0, :2] - SLR_THETA0[:2]) < 3 * se[:, 0, :2])

    def test_deterministic(self, slr_plan, slr_summary):
        again = run_simulation(slr_plan, threads=2, chunk=7)
        np.testing.assert_array_equal(again.estimates, slr_summary.estimates)

    def test_seed_independence(self, slr_plan, slr_summary):
        other = run_simulation(
            SimulationPlan(
                slr_plan.model, slr_plan.theta0, slr_plan.cont, slr_plan.alpha_grid, slr_plan.eps_grid, 40, base_seed=99
            )
        )
        _, m1, _ = slr_summary.quantiles()
        _, m2, _ = other.quantiles()
        se = np.hypot(median_se(slr_summary), median_se(other))
        assert np.all(np.abs(m1 - m2) < 4 * se + 1e-12)

    def test_common_datasets_across_alpha(self, slr_summary):
        # at eps = 0 every dataset is fitted at every alpha; the OLS fit (alpha = 0)
        # differs from the alpha = 0.5 fit, but both come from the same draws
        assert slr_summary.estimates.shape == (2, 2, 40, 3)
        assert np.all(slr_summary.converged)

    def test_single_replicate_bands_collapse(self, slr):
        plan = SimulationPlan(slr, SLR_THETA0, ContaminationScheme.from_model(slr, SLR_CONT, 0.0), (0.5,), (0.1,), n_reps=1)
        q25, med, q75 = run_simulation(plan).quantiles()
        np.testing.assert_array_equal(q25, med)
        np.testing.assert_array_equal(q75, med)

    def test_csv(self, slr_summary, tmp_path):
        slr_summary.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "#schema=v1"
        assert lines[1] == "alpha,eps,coord,median,q25,q75,conv_rate,flag"
        rows = read_summary_csv(tmp_path / "s.csv")
        assert len(rows) == 2 * 2 * 3
        assert {r["coord"] for r in rows} == {"beta0", "beta1", "sigma"}

    def test_low_convergence_flag(self, tmp_path):
        est = np.zeros((1, 1, 4, 1))
        conv = np.array([[[True, False, False, False]]])
        ReplicateSummary(np.array([0.5]), np.array([0.1]), est, conv, ("t",)).to_csv(tmp_path / "s.csv")
        row = read_summary_csv(tmp_path / "s.csv")[0]
        assert row["flag"] == "low-convergence" and row["conv_rate"] == 0.25

    def test_non_converged_excluded(self):
        est = np.array([1.0, 2.0, 3.0, 100.0]).reshape(1, 1, 4, 1)
        conv = np.array([[[True, True, True, False]]])
        _, med, _ = ReplicateSummary(np.array([0.5]), np.array([0.1]), est, conv, ("t",)).quantiles()
        assert med[0, 0, 0] == 2.0

    def test_all_failed_cell_is_nan(self):
        est = np.zeros((1, 1, 2, 1))
        conv = np.zeros((1, 1, 2), dtype=bool)
        _, med, _ = ReplicateSummary(np.array([0.5]), np.array([0.1]), est, conv, ("t",)).quantiles()
        assert np.isnan(med).all()

    def test_poisson_runs(self):
        model = poisson_model()
        plan = SimulationPlan(
            model,
            POIS_THETA0,
            ContaminationScheme.linear_mean(model, [3, 2], 0.0),
            (0.0, 0.5),
            (0.0, 0.3),
            n_reps=5,
            opt=OptimizerConfig(n_starts=3, method="gradient"),
        )
        summary = run_simulation(plan)
        assert summary.conv_rate.min() >= 0.8
