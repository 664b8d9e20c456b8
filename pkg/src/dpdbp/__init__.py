"""Minimum density power divergence estimation and breakdown-point analysis
for fixed-design regression models."""

from .breakdown import (
    BoundProblem,
    BreakdownPoint,
    SweepTable,
    abp_lower_bound,
    compute_L0,
    empirical_breakdown_point,
    overlap_mass,
    poisson_bound_sweep,
)
from .divergence import (
    DpdConfig,
    Exponential,
    Normal,
    Poisson,
    dpd,
    gaussian_cross_moment,
    power_norm,
    q_alpha,
    r_alpha,
)
from .errors import ConfigError, DomainError, DpdError, InvalidParameterError, NumericalError
from .estimation import FitResult, OptimizerConfig, empirical_objective, estimating_equation, mdpde_fit
from .functional import (
    ContaminationScheme,
    FunctionalResult,
    MonteCarloConfig,
    mdpdf,
    mdpdf_sweep,
    population_objective,
)
from .models import (
    AffineVector,
    DesignMatrix,
    ExponentialLogLink,
    Linear,
    MichaelisMenten,
    NormalNLR,
    PoissonLogLink,
    generate_design,
)
from .simulation import ReplicateSummary, SimulationPlan, run_simulation, sample_contaminated

__version__ = "0.1.0"
