"""Built-in trial designs used by the case studies, the verification harness,
and the test-bench fixtures."""

from __future__ import annotations

import numpy as np

from .models import CovariateSpace, bernoulli_family, gaussian_family, power_law_family
from .rules import GaussianTest, IdentityOnUnit, PlayTheWinner, ZhangRosenberger
from .urn import TrialDesign

__all__ = [
    "SEPSICOOL_SUCCESS",
    "sepsicool_design",
    "sepsicool_pooled_success",
    "unit_power_design",
    "play_the_winner_design",
    "gaussian_sqrt_design",
    "gaussian_test_design",
]

# Survival probabilities by (arm, severity stratum) from the septic-shock
# cooling trial redesign: arm 1 no cooling, arm 2 cooling; stratum 1 low
# severity, stratum 2 moderate/high severity.
SEPSICOOL_SUCCESS = np.array([[0.657, 0.657], [0.842, 0.406]])


def sepsicool_design(known_model: bool = False, n_burn: int = 1) -> TrialDesign:
    """Two-arm play-the-winner urn on the septic-shock cooling parameters,
    equal-probability severity strata."""
    return TrialDesign(
        family=bernoulli_family(SEPSICOOL_SUCCESS),
        rule=PlayTheWinner(n_treatments=2),
        covariates=CovariateSpace(np.array([0.5, 0.5])),
        known_model=known_model,
        n_burn=n_burn,
    )


def sepsicool_pooled_success(mu=(0.5, 0.5)) -> np.ndarray:
    """Per-arm success probabilities after pooling the strata (the
    covariate-blind urn sees these)."""
    mu = np.asarray(mu, dtype=float)
    return SEPSICOOL_SUCCESS @ mu


def unit_power_design(
    alpha: float,
    beta: float,
    mu=(0.5, 0.5),
    known_model: bool = True,
) -> TrialDesign:
    """Two arms, two strata, responses on (0,1) with CDF y**(1/a) per stratum
    (exponents alpha, beta), reinforced by the identity rule: the closed-form
    bench design for the second-order theory."""
    return TrialDesign(
        family=power_law_family([alpha, beta], n_treatments=2),
        rule=IdentityOnUnit(),
        covariates=CovariateSpace(np.asarray(mu, dtype=float)),
        known_model=known_model,
    )


def play_the_winner_design(
    success,
    mu=None,
    known_model: bool = False,
) -> TrialDesign:
    """Play-the-winner urn for arbitrary (d, K) success probabilities."""
    success = np.atleast_2d(np.asarray(success, dtype=float))
    d, K = success.shape
    if mu is None:
        mu = np.full(K, 1.0 / K)
    return TrialDesign(
        family=bernoulli_family(success),
        rule=PlayTheWinner(n_treatments=d),
        covariates=CovariateSpace(np.asarray(mu, dtype=float)),
        known_model=known_model,
    )


def gaussian_sqrt_design(
    mean,
    sd,
    mu=None,
    known_model: bool = False,
    mean_floor: float = 1e-6,
) -> TrialDesign:
    """Two Gaussian arms targeting the square-root mean/sd allocation."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    if mu is None:
        mu = np.full(mean.shape[1], 1.0 / mean.shape[1])
    return TrialDesign(
        family=gaussian_family(mean, sd),
        rule=ZhangRosenberger(mean_floor=mean_floor),
        covariates=CovariateSpace(np.asarray(mu, dtype=float)),
        known_model=known_model,
    )


def gaussian_test_design(
    mean,
    sd,
    reference_mean=None,
    mu=None,
    known_model: bool = True,
) -> TrialDesign:
    """Two Gaussian arms under the mean-comparison test rule; the reference
    mean defaults to the first arm's means (the null hypothesis)."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    sd = np.asarray(sd, dtype=float).reshape(-1)
    if sd.size == 1:
        sd = np.repeat(sd, mean.shape[0])
    if reference_mean is None:
        reference_mean = mean[0]
    if mu is None:
        mu = np.full(mean.shape[1], 1.0 / mean.shape[1])
    return TrialDesign(
        family=gaussian_family(mean, sd),
        rule=GaussianTest(reference_mean=tuple(np.asarray(reference_mean, dtype=float)), sd=float(sd[0])),
        covariates=CovariateSpace(np.asarray(mu, dtype=float)),
        known_model=known_model,
    )
