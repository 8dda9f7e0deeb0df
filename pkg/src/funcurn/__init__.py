"""funcurn: covariate-adjusted response-adaptive randomization on a
functional urn, with its limiting allocations and fluctuation covariance.

The hot per-patient loop runs through a compiled extension when available
(funcurn.engine.ENGINE == "compiled") and otherwise through a semantically
identical pure-Python fallback.
"""

from .asymptotics import (
    AsymptoticReport,
    check_assumptions,
    compute_report,
    expected_outcome,
    g_vector,
    gamma_zz,
    lambda_star,
    limiting_H,
    solve_sigma,
    target_allocation,
)
from .engine import ENGINE, run_replications, simulate_trial
from .estimators import EstimatorSpec, default_estimator_specs, increment_covariance
from .harness import HarnessConfig, monte_carlo, sepsicool_case_study
from .models import (
    CovariateSpace,
    ModelEstimate,
    ResponseFamily,
    bernoulli_family,
    cdf,
    empirical_family,
    gaussian_family,
    power_law_family,
    preimage,
    quantile,
    sample,
    update_estimate,
)
from .rules import (
    GaussianTest,
    IdentityOnUnit,
    PlayTheWinner,
    ZhangRosenberger,
    build_rule,
    evaluate_u,
)
from .urn import (
    TrialDesign,
    TrialTrajectory,
    UrnState,
    replacement_matrix,
    run_trial,
    sample_color,
    step,
    weighting_vector,
)

__version__ = "0.1.0"

__all__ = [
    "ENGINE",
    "__version__",
    "AsymptoticReport",
    "CovariateSpace",
    "EstimatorSpec",
    "GaussianTest",
    "HarnessConfig",
    "IdentityOnUnit",
    "ModelEstimate",
    "PlayTheWinner",
    "ResponseFamily",
    "TrialDesign",
    "TrialTrajectory",
    "UrnState",
    "ZhangRosenberger",
    "bernoulli_family",
    "build_rule",
    "cdf",
    "check_assumptions",
    "compute_report",
    "default_estimator_specs",
    "empirical_family",
    "evaluate_u",
    "expected_outcome",
    "g_vector",
    "gamma_zz",
    "gaussian_family",
    "increment_covariance",
    "lambda_star",
    "limiting_H",
    "monte_carlo",
    "power_law_family",
    "preimage",
    "quantile",
    "replacement_matrix",
    "run_replications",
    "run_trial",
    "sample",
    "sample_color",
    "sepsicool_case_study",
    "simulate_trial",
    "solve_sigma",
    "step",
    "target_allocation",
    "update_estimate",
    "weighting_vector",
]
