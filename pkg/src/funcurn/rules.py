"""Reinforcement rules u^{ij}_t converting a response into added ball mass.

Every rule keeps each column of the replacement matrix summing to exactly 1
(constant balance), so total urn mass grows by one ball per patient.  Rules
are immutable; those that depend on response-distribution features (the
square-root allocation rule) read them from whatever family they are handed,
true or estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

from .models import ResponseFamily

__all__ = [
    "PlayTheWinner",
    "IdentityOnUnit",
    "ZhangRosenberger",
    "GaussianTest",
    "ReplacementRule",
    "build_rule",
    "evaluate_u",
    "rule_column",
    "sqrt_mean_ratio",
]


class RuleError(ValueError):
    """Invalid rule construction or evaluation."""


@dataclass(frozen=True)
class PlayTheWinner:
    """u^{ij}(y) = y*delta_ij + (1-y)(1-delta_ij)/(d-1), responses in [0,1].

    With binary responses this is the classical scheme: a success adds one
    ball of the winning colour, a failure spreads one ball over the others.
    """

    n_treatments: int = 2

    def __post_init__(self) -> None:
        if self.n_treatments < 2:
            raise RuleError("play-the-winner needs at least two treatments")


@dataclass(frozen=True)
class IdentityOnUnit:
    """Two-treatment rule u^{jj}(y) = y for responses supported on (0,1)."""

    n_treatments: int = 2

    def __post_init__(self) -> None:
        if self.n_treatments != 2:
            raise RuleError("identity-on-unit is a two-treatment rule")


@dataclass(frozen=True)
class ZhangRosenberger:
    """Square-root allocation weights for two Gaussian arms.

    u^{1j} equals sigma_1*sqrt(m_2) / (sigma_1*sqrt(m_2) + sigma_2*sqrt(m_1))
    regardless of y, evaluated on the means/sds of the supplied family;
    means are floored at ``mean_floor`` before the square root since adaptive
    mean estimates can dip below zero.
    """

    mean_floor: float = 1e-6

    def __post_init__(self) -> None:
        if not self.mean_floor > 0:
            raise RuleError("mean floor must be positive")


@dataclass(frozen=True)
class GaussianTest:
    """Two-treatment test rule u^{11}_t(y) = u^{22}_t(y) = Phi((y - ref(t))/sd).

    ``reference_mean`` is the hypothesised common mean function, ``sd`` the
    known response scale; both stay fixed during the trial.
    """

    reference_mean: tuple[float, ...]
    sd: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "reference_mean", tuple(float(g) for g in np.atleast_1d(self.reference_mean))
        )
        if not self.sd > 0:
            raise RuleError("reference sd must be positive")


ReplacementRule = Union[PlayTheWinner, IdentityOnUnit, ZhangRosenberger, GaussianTest]

_KINDS = {
    "play_the_winner": PlayTheWinner,
    "identity_on_unit": IdentityOnUnit,
    "zhang_rosenberger": ZhangRosenberger,
    "gaussian_test": GaussianTest,
}


def build_rule(kind: str, **params) -> ReplacementRule:
    """Construct a rule by name; parameters are validated by the rule type."""
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise RuleError(f"unknown rule kind {kind!r}") from None
    return cls(**params)


def sqrt_mean_ratio(m1: float, m2: float, s1: float, s2: float, floor: float = 1e-6) -> float:
    """First-arm weight s1*sqrt(m2)/(s1*sqrt(m2) + s2*sqrt(m1)), means floored."""
    m1 = max(m1, floor)
    m2 = max(m2, floor)
    a = s1 * math.sqrt(m2)
    b = s2 * math.sqrt(m1)
    return a / (a + b)


def n_treatments_of(rule: ReplacementRule) -> int | None:
    if isinstance(rule, (PlayTheWinner, IdentityOnUnit)):
        return rule.n_treatments
    return 2  # both Gaussian rules are two-armed


def evaluate_u(
    rule: ReplacementRule,
    i: int,
    j: int,
    t: int,
    y: float,
    family: ResponseFamily | None = None,
) -> float:
    """Mass of colour i added per unit weight when arm j responds y in stratum t.

    ``family`` supplies the means/sds for rules that need them (the
    square-root rule); it may be the true family or a plug-in estimate.
    """
    return rule_column(rule, j, t, y, family)[i]


def rule_column(
    rule: ReplacementRule,
    j: int,
    t: int,
    y: float,
    family: ResponseFamily | None = None,
) -> np.ndarray:
    """Full reinforcement column (u^{1j}_t(y), .., u^{dj}_t(y)); sums to 1."""
    if isinstance(rule, PlayTheWinner):
        d = rule.n_treatments
        if not 0.0 <= y <= 1.0:
            raise RuleError(f"play-the-winner needs responses in [0,1], got {y}")
        col = np.full(d, (1.0 - y) / (d - 1))
        col[j] = y
        return col
    if isinstance(rule, IdentityOnUnit):
        if not 0.0 <= y <= 1.0:
            raise RuleError(f"identity-on-unit needs responses in [0,1], got {y}")
        col = np.array([1.0 - y, 1.0 - y])
        col[j] = y
        return col
    if isinstance(rule, ZhangRosenberger):
        if family is None:
            raise RuleError("square-root rule needs a response family for its means")
        c1 = family.cell(0, t)
        c2 = family.cell(1, t)
        try:
            m1, m2 = c1.mean, c2.mean
            s1, s2 = c1.sd, c2.sd
        except AttributeError:
            raise RuleError("square-root rule expects Gaussian cells") from None
        w = sqrt_mean_ratio(m1, m2, s1, s2, rule.mean_floor)
        return np.array([w, 1.0 - w])
    if isinstance(rule, GaussianTest):
        try:
            ref = rule.reference_mean[t]
        except IndexError:
            raise RuleError(f"no reference mean for stratum {t}") from None
        w = float(ndtr((y - ref) / rule.sd))
        # u^{jj} = Phi(.), the off-diagonal entry is the complement
        col = np.array([1.0 - w, 1.0 - w])
        col[j] = w
        return col
    raise RuleError(f"unknown rule {rule!r}")
