"""Adaptive estimators in stochastic-approximation form.

The built-in family covers running means of a response statistic h(y): the
recursion value <- value - (1/count)*(f(value) - increment) with drift
f(theta) = theta - theta* and martingale increment h(y) - theta* telescopes
to the plain sample mean of h over the triggering patients, so the runtime
never needs the truth.  The drift Jacobian and increment covariance, which
the covariance blocks of the limit theory consume, are exposed separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import (
    BernoulliCell,
    EmpiricalCell,
    GaussianCell,
    PowerLawCell,
    ResponseFamily,
)

__all__ = [
    "EstimatorSpec",
    "SAState",
    "sa_update",
    "new_sa_state",
    "sa_observe",
    "statistic_value",
    "statistic_truth",
    "delta_m",
    "increment_covariance",
    "default_estimator_specs",
]

MODES = ("stratified", "stratified-shared", "adjusted", "adjusted-shared")
STATISTICS = ("mean", "neglog")


class EstimatorError(ValueError):
    """Estimator spec incompatible with the design."""


@dataclass(frozen=True)
class EstimatorSpec:
    """One adaptive estimator: what it averages and when it updates.

    mode selects the triggering indicator and normalising count:
      stratified        per (stratum, arm), count = cell assignments
      stratified-shared per stratum, count = stratum patients
      adjusted          per arm, count = arm assignments
      adjusted-shared   single, count = n
    ``jacobian`` is the drift derivative at the truth (identity for the
    built-in sample means).  Multi-dimensional user estimators supply their
    own jacobian; built-ins are scalar.
    """

    mode: str
    statistic: str = "mean"
    jacobian: np.ndarray | None = None
    dim: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise EstimatorError(f"unknown estimator mode {self.mode!r}")
        if self.statistic not in STATISTICS:
            raise EstimatorError(f"unknown statistic {self.statistic!r}")
        if self.jacobian is not None:
            jac = np.atleast_2d(np.asarray(self.jacobian, dtype=float))
            if jac.shape != (self.dim, self.dim):
                raise EstimatorError("jacobian shape does not match dim")
            object.__setattr__(self, "jacobian", jac)

    def drift_jacobian(self) -> np.ndarray:
        return self.jacobian if self.jacobian is not None else np.eye(self.dim)


def statistic_value(spec: EstimatorSpec, y: float) -> float:
    if spec.statistic == "mean":
        return float(y)
    if y <= 0.0:
        raise EstimatorError("neglog statistic needs positive responses")
    return -math.log(y)


def _cell_statistic_moments(cell, statistic: str) -> tuple[float, float]:
    """(E h(Y), Var h(Y)) for one response cell, closed form where known."""
    if statistic == "mean":
        if isinstance(cell, GaussianCell):
            return cell.mean, cell.sd**2
        if isinstance(cell, BernoulliCell):
            p = cell.success
            return p, p * (1.0 - p)
        if isinstance(cell, PowerLawCell):
            a = cell.exponent
            m = 1.0 / (1.0 + a)
            return m, 1.0 / (2.0 * a + 1.0) - m * m
        if isinstance(cell, EmpiricalCell) and cell.values:
            xs = np.asarray(cell.values)
            return float(xs.mean()), float(xs.var())
    else:  # neglog
        if isinstance(cell, PowerLawCell):
            a = cell.exponent
            return a, a * a
        if isinstance(cell, EmpiricalCell) and cell.values:
            xs = -np.log(np.asarray(cell.values))
            return float(xs.mean()), float(xs.var())
    raise EstimatorError(
        f"statistic {statistic!r} has no moments for {type(cell).__name__}"
    )


def statistic_truth(
    spec: EstimatorSpec,
    family: ResponseFamily,
    t: int | None = None,
    j: int | None = None,
    atol: float = 1e-10,
) -> float:
    """Limiting value of the estimator; pooled modes require the pooled cells
    to share it (otherwise the estimator does not fit the assumed dynamics)."""
    d, K = family.n_treatments, family.n_strata
    if spec.mode == "stratified":
        return _cell_statistic_moments(family.cell(j, t), spec.statistic)[0]
    if spec.mode == "stratified-shared":
        vals = [_cell_statistic_moments(family.cell(jj, t), spec.statistic)[0] for jj in range(d)]
    elif spec.mode == "adjusted":
        vals = [_cell_statistic_moments(family.cell(j, tt), spec.statistic)[0] for tt in range(K)]
    else:
        vals = [
            _cell_statistic_moments(family.cell(jj, tt), spec.statistic)[0]
            for jj in range(d)
            for tt in range(K)
        ]
    if max(vals) - min(vals) > atol:
        raise EstimatorError(
            f"{spec.mode} estimator pools cells with different {spec.statistic} "
            f"truths {vals}; its assumed dynamics do not hold"
        )
    return vals[0]


def delta_m(spec: EstimatorSpec, family: ResponseFamily, t: int, j: int, y: float) -> float:
    """Martingale increment h(y) - truth for the block triggered at (t, j)."""
    return statistic_value(spec, y) - statistic_truth(spec, family, t, j)


def increment_covariance(
    spec: EstimatorSpec,
    family: ResponseFamily,
    t: int | None = None,
    j: int | None = None,
    v: np.ndarray | None = None,
    mu: np.ndarray | None = None,
) -> float:
    """E[increment^2] conditioned on the block's trigger.

    Pooled modes mix the per-cell second moments about the shared truth with
    the appropriate limiting weights: allocation v within a stratum,
    covariate weights mu across strata.
    """
    truth = statistic_truth(spec, family, t, j)

    def second_moment(jj, tt):
        m, var = _cell_statistic_moments(family.cell(jj, tt), spec.statistic)
        return var + (m - truth) ** 2

    d, K = family.n_treatments, family.n_strata
    if spec.mode == "stratified":
        return second_moment(j, t)
    if spec.mode == "stratified-shared":
        w = np.asarray(v)[t] if v is not None else np.full(d, 1.0 / d)
        return float(sum(w[jj] * second_moment(jj, t) for jj in range(d)))
    if spec.mode == "adjusted":
        # weights proportional to mu(s) v^j(s): P(T=s | arm j assigned)
        vv = np.asarray(v) if v is not None else np.full((K, d), 1.0 / d)
        mm = np.asarray(mu) if mu is not None else np.full(K, 1.0 / K)
        w = mm * vv[:, j]
        w = w / w.sum()
        return float(sum(w[tt] * second_moment(j, tt) for tt in range(K)))
    vv = np.asarray(v) if v is not None else np.full((K, d), 1.0 / d)
    mm = np.asarray(mu) if mu is not None else np.full(K, 1.0 / K)
    return float(
        sum(
            mm[tt] * vv[tt, jj] * second_moment(jj, tt)
            for jj in range(d)
            for tt in range(K)
        )
    )


# ---------------------------------------------------------------------------
# running SA state
# ---------------------------------------------------------------------------


def sa_update(value: float, count: int, drift: float, increment: float) -> float:
    """One recursion step value - (1/count)*(drift - increment)."""
    if count <= 0:
        raise EstimatorError("update triggered with zero count")
    return value - (drift - increment) / count


@dataclass
class SAState:
    """Per-block running values of one estimator."""

    spec: EstimatorSpec
    values: np.ndarray          # block grid, see new_sa_state
    counts: np.ndarray

    def value(self, t: int = 0, j: int = 0) -> float:
        return float(self.values[self._slot(t, j)])

    def _slot(self, t: int, j: int):
        if self.spec.mode == "stratified":
            return (t, j)
        if self.spec.mode == "stratified-shared":
            return (t,)
        if self.spec.mode == "adjusted":
            return (j,)
        return ()


def new_sa_state(spec: EstimatorSpec, n_treatments: int, n_strata: int, start: float = 0.0) -> SAState:
    shape = {
        "stratified": (n_strata, n_treatments),
        "stratified-shared": (n_strata,),
        "adjusted": (n_treatments,),
        "adjusted-shared": (),
    }[spec.mode]
    return SAState(
        spec=spec,
        values=np.full(shape, float(start)),
        counts=np.zeros(shape, dtype=np.int64),
    )


def sa_observe(state: SAState, t: int, j: int, y: float) -> SAState:
    """Fold one (stratum, arm, response) triple into the estimator.

    For the built-in identity-drift family the truth cancels from the
    recursion, leaving value - (value - h(y))/count: the running mean of the
    statistic over the triggering patients.
    """
    slot = state._slot(t, j)
    state.counts[slot] += 1
    c = int(state.counts[slot])
    h = statistic_value(state.spec, y)
    if c == 1:
        state.values[slot] = h
    else:
        state.values[slot] = sa_update(
            float(state.values[slot]), c, float(state.values[slot]) - h, 0.0
        )
    return state


def default_estimator_specs(kind: str, mode: str) -> tuple[EstimatorSpec, ...]:
    """Natural estimator set per response kind and theorem mode.

    Stratum-conditional features use per-cell means (success probability,
    conditional mean); the unit-interval power family estimates its exponent
    from -log(response), pooled over arms within a stratum.
    """
    if mode == "strata":
        if kind == "powerlaw":
            return (EstimatorSpec(mode="stratified-shared", statistic="neglog"),)
        return (EstimatorSpec(mode="stratified", statistic="mean"),)
    if kind == "powerlaw":
        return (EstimatorSpec(mode="adjusted", statistic="neglog"),)
    return (EstimatorSpec(mode="adjusted", statistic="mean"),)
