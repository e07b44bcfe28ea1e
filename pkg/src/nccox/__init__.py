"""Nested case-control Cox model toolkit.

Simulation from the stratum observation density, maximum partial
likelihood and pooled baseline-survival estimation, closed-form
semiparametric efficiency bounds, and a quadrature workbench that
verifies the underlying projection calculus numerically.
"""

from .bounds import (
    BoundsInput,
    breslow_covariance,
    effective_information,
    effective_information_limit,
    known_theta_covariance,
    log_survival_moment,
    moment_functionals,
    survival_lower_bound,
)
from .estimators import (
    DegenerateLikelihoodError,
    MpleFit,
    SeparationError,
    SolverOptions,
    StepFunction,
    breslow,
    fit_mple,
    mple_asymptotic_variance,
    partial_loglik,
    score_and_information,
)
from .model import (
    BaselineModel,
    ConfigError,
    CovariateModel,
    GroupSizeDistribution,
    ModelConfig,
    Observation,
    ValidationReport,
    exponential_baseline,
    format_config,
    load_config,
    mixture_survival,
    normal_covariates,
    null_density,
    observation_density,
    parse_config,
    sampling_weight,
    survival_given_covariate,
    truncated_normal_covariates,
    uniform_covariates,
    validate_config,
    weibull_baseline,
)
from .operators import (
    CovariateFunction,
    QuadratureScheme,
    SigmaFunction,
    TimeFunction,
    adjoint_baseline_op,
    adjoint_covariate_op,
    apply_baseline_op,
    apply_covariate_op,
    baseline_gram_op,
    baseline_gram_solve,
    baseline_lsq_direction,
    build_scheme,
    covariate_lsq_direction,
    density_sqrt,
    hazard_ratio_op,
    hellinger_direction_check,
    information_by_quadrature,
    parametric_score,
    run_identity_suite,
    sigma_inner,
)
from .sampler import (
    Dataset,
    GofReport,
    RngStream,
    goodness_of_fit_check,
    group_stream,
    load_dataset,
    parse_dataset,
    save_dataset,
    serialize_dataset,
    simulate_dataset,
    simulate_group,
)

__version__ = "0.1.0"
