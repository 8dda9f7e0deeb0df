"""Conditional response distributions indexed by (treatment, stratum).

A response family holds one distribution cell per treatment ``j`` and
covariate stratum ``t``, with CDF / quantile / preimage / sampling access.
Plug-in estimates of the same family (``ModelEstimate``) are what the urn's
replacement matrix consumes while the trial adapts.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "CovariateSpace",
    "GaussianCell",
    "BernoulliCell",
    "PowerLawCell",
    "EmpiricalCell",
    "ResponseCell",
    "ResponseFamily",
    "gaussian_family",
    "bernoulli_family",
    "power_law_family",
    "empirical_family",
    "cdf",
    "quantile",
    "preimage",
    "sample",
    "EstimatePriors",
    "ModelEstimate",
    "update_estimate",
]


class ModelError(ValueError):
    """Invalid model parameters or out-of-domain query."""


# ---------------------------------------------------------------------------
# covariates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateSpace:
    """Distribution of patient strata, optionally adapted during the trial.

    ``weights`` is the base probability vector over strata 1..K.  When
    ``adaptive_rule`` is set, it maps (estimator snapshot, allocation
    proportions) to the probability vector used for the next patient; every
    entry must stay >= ``floor`` (strict positivity is required for the
    stratified theory, nonnegativity suffices for the adjusted one).
    """

    weights: np.ndarray
    adaptive_rule: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    floor: float = 0.0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 1:
            raise ModelError("covariate weights must be a 1-d vector")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ModelError("covariate weights must be a probability vector")

    @property
    def n_strata(self) -> int:
        return int(self.weights.size)

    def distribution(
        self,
        estimator_snapshot: np.ndarray | None = None,
        allocation: np.ndarray | None = None,
    ) -> np.ndarray:
        """Probability vector for the next patient's stratum."""
        if self.adaptive_rule is None:
            return self.weights
        mu = np.asarray(self.adaptive_rule(estimator_snapshot, allocation), dtype=float)
        if mu.shape != self.weights.shape or np.any(mu < self.floor - 1e-12) or abs(mu.sum() - 1.0) > 1e-9:
            raise ModelError("adaptive covariate rule returned an invalid probability vector")
        return mu


# ---------------------------------------------------------------------------
# response cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianCell:
    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not self.sd > 0:
            raise ModelError("Gaussian sd must be positive")


@dataclass(frozen=True)
class BernoulliCell:
    success: float

    def __post_init__(self) -> None:
        if not 0.0 < self.success < 1.0:
            raise ModelError("Bernoulli success probability must lie in (0, 1)")


@dataclass(frozen=True)
class PowerLawCell:
    """Responses on (0,1) with CDF y**(1/exponent); quantile v**exponent."""

    exponent: float

    def __post_init__(self) -> None:
        if not self.exponent > 0:
            raise ModelError("power-law exponent must be positive")


@dataclass(frozen=True)
class EmpiricalCell:
    """Nonparametric cell: the sorted observed sample defines a step CDF."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(sorted(float(v) for v in self.values)))


ResponseCell = Union[GaussianCell, BernoulliCell, PowerLawCell, EmpiricalCell]


@dataclass(frozen=True)
class ResponseFamily:
    """Grid of response cells, one per (treatment j, stratum t)."""

    cells: tuple[tuple[ResponseCell, ...], ...]

    def __post_init__(self) -> None:
        if not self.cells or not self.cells[0]:
            raise ModelError("response family needs at least one cell")
        k = len(self.cells[0])
        if any(len(row) != k for row in self.cells):
            raise ModelError("ragged response family")

    @property
    def n_treatments(self) -> int:
        return len(self.cells)

    @property
    def n_strata(self) -> int:
        return len(self.cells[0])

    def cell(self, j: int, t: int) -> ResponseCell:
        if not (0 <= j < self.n_treatments and 0 <= t < self.n_strata):
            raise IndexError(f"no response cell for treatment {j}, stratum {t}")
        return self.cells[j][t]

    def kind(self) -> str | None:
        """Shared cell kind, or None for a mixed family."""
        kinds = {type(c).__name__ for row in self.cells for c in row}
        if len(kinds) != 1:
            return None
        return {
            "GaussianCell": "gaussian",
            "BernoulliCell": "bernoulli",
            "PowerLawCell": "powerlaw",
            "EmpiricalCell": "empirical",
        }[kinds.pop()]

    def is_discrete(self, j: int, t: int) -> bool:
        return isinstance(self.cell(j, t), (BernoulliCell, EmpiricalCell))


def gaussian_family(mean, sd) -> ResponseFamily:
    """mean: (d, K) conditional means; sd: per-treatment scale (length d)."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    sd = np.asarray(sd, dtype=float).reshape(-1)
    if sd.size == 1:
        sd = np.repeat(sd, mean.shape[0])
    if sd.size != mean.shape[0]:
        raise ModelError("need one sd per treatment")
    return ResponseFamily(
        tuple(
            tuple(GaussianCell(float(mean[j, t]), float(sd[j])) for t in range(mean.shape[1]))
            for j in range(mean.shape[0])
        )
    )


def bernoulli_family(success) -> ResponseFamily:
    success = np.atleast_2d(np.asarray(success, dtype=float))
    return ResponseFamily(
        tuple(
            tuple(BernoulliCell(float(success[j, t])) for t in range(success.shape[1]))
            for j in range(success.shape[0])
        )
    )


def power_law_family(exponent, n_treatments: int = 2) -> ResponseFamily:
    """exponent: per-stratum vector (shared by treatments) or a (d, K) grid."""
    a = np.asarray(exponent, dtype=float)
    if a.ndim == 1:
        a = np.tile(a, (n_treatments, 1))
    return ResponseFamily(
        tuple(
            tuple(PowerLawCell(float(a[j, t])) for t in range(a.shape[1]))
            for j in range(a.shape[0])
        )
    )


def empirical_family(samples) -> ResponseFamily:
    """samples: nested [treatment][stratum] iterables of observed responses."""
    return ResponseFamily(
        tuple(tuple(EmpiricalCell(tuple(cell)) for cell in row) for row in samples)
    )


# ---------------------------------------------------------------------------
# distribution operations
# ---------------------------------------------------------------------------


def _cell_cdf(cell: ResponseCell, y: float) -> float:
    if isinstance(cell, GaussianCell):
        return float(ndtr((y - cell.mean) / cell.sd))
    if isinstance(cell, BernoulliCell):
        if y < 0.0:
            return 0.0
        if y < 1.0:
            return 1.0 - cell.success
        return 1.0
    if isinstance(cell, PowerLawCell):
        if y <= 0.0:
            return 0.0
        if y >= 1.0:
            return 1.0
        return y ** (1.0 / cell.exponent)
    xs = cell.values
    if not xs:
        # no data yet: fall back to uniform(0,1)
        return min(max(y, 0.0), 1.0)
    return bisect.bisect_right(xs, y) / len(xs)


def _cell_quantile(cell: ResponseCell, v: float) -> float:
    if not 0.0 < v < 1.0:
        raise ModelError(f"quantile level must lie in (0,1), got {v}")
    if isinstance(cell, GaussianCell):
        return cell.mean + cell.sd * float(ndtri(v))
    if isinstance(cell, BernoulliCell):
        return 1.0 if v >= 1.0 - cell.success else 0.0
    if isinstance(cell, PowerLawCell):
        return math.pow(v, cell.exponent)
    xs = cell.values
    if not xs:
        return v
    # generalized inverse of the empirical step CDF: inf{y : F(y) >= v}
    return xs[math.ceil(v * len(xs)) - 1]


def cdf(family: ResponseFamily, j: int, t: int, y: float) -> float:
    """P(response <= y) under treatment j in stratum t."""
    return _cell_cdf(family.cell(j, t), float(y))


def quantile(family: ResponseFamily, j: int, t: int, v: float) -> float:
    """Generalized inverse CDF inf{y : F(y) >= v}, v in (0,1)."""
    return _cell_quantile(family.cell(j, t), float(v))


def sample(family: ResponseFamily, j: int, t: int, v: float) -> float:
    """Quantile transform of a uniform draw (the sampling mechanism)."""
    return quantile(family, j, t, v)


def preimage(family: ResponseFamily, j: int, t: int, y: float) -> tuple[float, float]:
    """Set of uniform levels mapping to y, as an interval (lo, hi].

    Continuous cells give the degenerate point lo == hi == F(y); discrete
    cells give the half-open interval (F(y-), F(y)] whose length is the pmf
    at y.  Raises for y outside the support.
    """
    cell = family.cell(j, t)
    y = float(y)
    if isinstance(cell, GaussianCell):
        f = _cell_cdf(cell, y)
        return (f, f)
    if isinstance(cell, BernoulliCell):
        if y == 0.0:
            return (0.0, 1.0 - cell.success)
        if y == 1.0:
            return (1.0 - cell.success, 1.0)
        raise ModelError(f"{y} is not a Bernoulli outcome")
    if isinstance(cell, PowerLawCell):
        if not 0.0 < y < 1.0:
            raise ModelError(f"{y} outside the (0,1) support")
        f = _cell_cdf(cell, y)
        return (f, f)
    xs = cell.values
    if not xs:
        if not 0.0 <= y <= 1.0:
            raise ModelError(f"{y} outside the uniform fallback support")
        return (y, y)
    lo = bisect.bisect_left(xs, y)
    hi = bisect.bisect_right(xs, y)
    if lo == hi:
        raise ModelError(f"{y} not in the empirical sample")
    return (lo / len(xs), hi / len(xs))


# ---------------------------------------------------------------------------
# plug-in estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatePriors:
    """Values used for a cell before it has seen ``n_burn`` observations."""

    bernoulli_p: float = 0.5
    gaussian_mean: float = 0.0
    gaussian_sd: float = 1.0
    power_exponent: float = 1.0


@dataclass
class ModelEstimate:
    """Running sufficient statistics of a response family, one writer per trial.

    ``clip_eps`` bounds Bernoulli estimates away from {0,1}; ``None`` selects
    the add-one-smoothing-equivalent bound 1/(count+2).  ``sigma`` holds the
    per-treatment Gaussian sd when it is treated as known; otherwise the sd is
    estimated from pooled within-cell residuals.
    """

    kind: str
    n_treatments: int
    n_strata: int
    priors: EstimatePriors = field(default_factory=EstimatePriors)
    clip_eps: float | None = None
    sigma: np.ndarray | None = None
    n_burn: int = 1
    count: np.ndarray = field(init=False)
    sum_y: np.ndarray = field(init=False)
    sum_y2: np.ndarray = field(init=False)
    sum_neglog: np.ndarray = field(init=False)
    samples: list | None = field(init=False, default=None)

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "bernoulli", "powerlaw", "empirical"):
            raise ModelError(f"unknown estimate kind {self.kind!r}")
        shape = (self.n_treatments, self.n_strata)
        self.count = np.zeros(shape, dtype=np.int64)
        self.sum_y = np.zeros(shape)
        self.sum_y2 = np.zeros(shape)
        self.sum_neglog = np.zeros(shape)
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        if self.kind == "empirical":
            self.samples = [
                [[] for _ in range(self.n_strata)] for _ in range(self.n_treatments)
            ]

    # -- accessors ---------------------------------------------------------

    def success_prob(self, j: int, t: int) -> float:
        c = int(self.count[j, t])
        if c < self.n_burn:
            return self.priors.bernoulli_p
        raw = self.sum_y[j, t] / c
        eps = self.clip_eps if self.clip_eps is not None else 1.0 / (c + 2.0)
        return min(max(raw, eps), 1.0 - eps)

    def mean(self, j: int, t: int) -> float:
        c = int(self.count[j, t])
        if c < self.n_burn:
            return self.priors.gaussian_mean
        return float(self.sum_y[j, t] / c)

    def sd(self, j: int) -> float:
        if self.sigma is not None:
            return float(self.sigma[j])
        # pooled within-cell residual scale for treatment j
        sse = 0.0
        dof = 0
        for t in range(self.n_strata):
            c = int(self.count[j, t])
            if c >= 2:
                m = self.sum_y[j, t] / c
                sse += self.sum_y2[j, t] - c * m * m
                dof += c - 1
        if dof < 1 or sse <= 0.0:
            return self.priors.gaussian_sd
        return math.sqrt(sse / dof)

    def exponent(self, t: int) -> float:
        """Stratum-shared power-law exponent (arms pooled)."""
        c = int(self.count[:, t].sum())
        if c < self.n_burn:
            return self.priors.power_exponent
        return float(self.sum_neglog[:, t].sum() / c)

    def as_family(self) -> ResponseFamily:
        """Plug-in response family used inside the replacement matrix."""
        d, k = self.n_treatments, self.n_strata
        if self.kind == "bernoulli":
            return bernoulli_family(
                [[self.success_prob(j, t) for t in range(k)] for j in range(d)]
            )
        if self.kind == "gaussian":
            return gaussian_family(
                [[self.mean(j, t) for t in range(k)] for j in range(d)],
                [self.sd(j) for j in range(d)],
            )
        if self.kind == "powerlaw":
            return power_law_family([self.exponent(t) for t in range(k)], n_treatments=d)
        return empirical_family(self.samples)


def update_estimate(est: ModelEstimate, j: int, t: int, y: float) -> ModelEstimate:
    """Fold one observed response into the estimate (in place)."""
    if not (0 <= j < est.n_treatments and 0 <= t < est.n_strata):
        raise IndexError(f"no estimate cell for treatment {j}, stratum {t}")
    est.count[j, t] += 1
    est.sum_y[j, t] += y
    est.sum_y2[j, t] += y * y
    if y > 0.0:
        est.sum_neglog[j, t] += -math.log(y)
    if est.samples is not None:
        bisect.insort(est.samples[j][t], float(y))
    return est
