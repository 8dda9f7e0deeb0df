"""Functional urn dynamics.

One conceptual urn per covariate stratum, all updated after every patient:
the observed response pins down the uniform level that generated it, and the
level is pushed through every stratum's quantile function to reinforce the
whole composition.  This module is the readable reference implementation;
`funcurn.engine` provides the packed fast path with identical semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .models import (
    BernoulliCell,
    CovariateSpace,
    EmpiricalCell,
    EstimatePriors,
    GaussianCell,
    ModelEstimate,
    PowerLawCell,
    ResponseFamily,
    preimage,
    quantile,
    update_estimate,
)
from .rules import ReplacementRule, ZhangRosenberger, n_treatments_of, rule_column

__all__ = [
    "TrialDesign",
    "UrnState",
    "TrialRecord",
    "TrialTrajectory",
    "sample_covariate",
    "sample_color",
    "interval_overlap",
    "weighting_vector",
    "weighting_matrix",
    "replacement_matrix",
    "step",
    "run_trial",
    "new_state",
]


class UrnError(RuntimeError):
    """Internal urn invariant violated."""


# ---------------------------------------------------------------------------
# design + state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialDesign:
    """Everything needed to run one adaptive trial.

    ``known_model`` switches the replacement matrix to the true response
    family (the regime under which the CLTs are proved); otherwise plug-in
    estimates are used, warmed up with ``priors`` until each cell has seen
    ``n_burn`` observations.  ``estimate_kind`` overrides the estimated
    family's form (e.g. "empirical" for nonparametric estimation of a
    parametric truth).
    """

    family: ResponseFamily
    rule: ReplacementRule
    covariates: CovariateSpace
    known_model: bool = False
    estimate_kind: str | None = None
    priors: EstimatePriors = field(default_factory=EstimatePriors)
    clip_eps: float | None = None
    sigma_known: bool = True
    n_burn: int = 1

    def __post_init__(self) -> None:
        d = self.family.n_treatments
        k = self.family.n_strata
        rule_d = n_treatments_of(self.rule)
        if rule_d is not None and rule_d != d:
            raise ValueError(f"rule is {rule_d}-armed but the family has {d} treatments")
        if self.covariates.n_strata != k:
            raise ValueError("covariate space and response family disagree on strata")
        kind = self.family.kind()
        if isinstance(self.rule, ZhangRosenberger):
            if kind != "gaussian":
                raise ValueError("the square-root allocation rule needs Gaussian responses")
            if not self.known_model and (self.estimate_kind or kind) != "gaussian":
                raise ValueError("the square-root rule needs Gaussian plug-in estimates")
        if self.estimate_kind is None and kind is None:
            raise ValueError("mixed families need an explicit estimate_kind")

    @property
    def n_treatments(self) -> int:
        return self.family.n_treatments

    @property
    def n_strata(self) -> int:
        return self.family.n_strata

    def new_estimate(self) -> ModelEstimate:
        kind = self.estimate_kind or self.family.kind()
        sigma = None
        if kind == "gaussian" and self.sigma_known:
            sigma = np.array(
                [self.family.cell(j, 0).sd for j in range(self.n_treatments)]
            )
        return ModelEstimate(
            kind=kind,
            n_treatments=self.n_treatments,
            n_strata=self.n_strata,
            priors=self.priors,
            clip_eps=self.clip_eps,
            sigma=sigma,
            n_burn=self.n_burn,
        )


@dataclass
class UrnState:
    """Ball masses plus the bookkeeping the design adapts on."""

    Y: np.ndarray                 # (d, K) ball mass per colour x stratum
    n: int                        # patients treated so far
    assignments: np.ndarray       # (d, K) per-stratum allocation counts
    totals: np.ndarray            # (d,) overall allocation counts
    estimate: ModelEstimate

    @property
    def Z(self) -> np.ndarray:
        """Colour proportions per stratum; every column sums to one."""
        return self.Y / self.Y.sum(axis=0, keepdims=True)

    def allocation_proportions(self) -> np.ndarray:
        tot = self.totals.sum()
        if tot == 0:
            return np.full_like(self.totals, 1.0 / self.totals.size, dtype=float)
        return self.totals / tot


def new_state(design: TrialDesign) -> UrnState:
    d, k = design.n_treatments, design.n_strata
    return UrnState(
        Y=np.ones((d, k)),
        n=0,
        assignments=np.zeros((d, k), dtype=np.int64),
        totals=np.zeros(d, dtype=np.int64),
        estimate=design.new_estimate(),
    )


@dataclass(frozen=True)
class TrialRecord:
    """One patient: stratum, assigned arm, response, and the urn they saw."""

    step: int
    stratum: int
    arm: int
    response: float
    proportions: np.ndarray       # Z_{n} after the update, (d, K)


@dataclass
class TrialTrajectory:
    design: TrialDesign
    seed: object
    stratum: np.ndarray           # (n,)
    arm: np.ndarray               # (n,)
    response: np.ndarray          # (n,)
    proportions: np.ndarray       # (n, d, K) Z after each update
    final: UrnState

    def summary(self) -> dict:
        st = self.final
        d, k = st.Y.shape
        strat_tot = st.assignments.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            strat_prop = np.where(strat_tot > 0, st.assignments / strat_tot, np.nan)
        return {
            "patients": int(st.n),
            "urn_proportions": st.Z.tolist(),
            "assignments_per_stratum": st.assignments.tolist(),
            "stratum_allocation_proportions": strat_prop.tolist(),
            "overall_allocation_counts": st.totals.tolist(),
            "overall_allocation_proportions": (
                st.allocation_proportions().tolist()
            ),
            "treatments": d,
            "strata": k,
        }


# ---------------------------------------------------------------------------
# sampling primitives
# ---------------------------------------------------------------------------


def sample_covariate(space: CovariateSpace, u: float, state: UrnState | None = None) -> int:
    """Stratum index drawn by inverting the (possibly adaptive) weights."""
    snapshot = None
    alloc = None
    if space.adaptive_rule is not None and state is not None:
        snapshot = _estimator_snapshot(state.estimate)
        alloc = state.allocation_proportions()
    mu = space.distribution(snapshot, alloc)
    return _index_from_uniform(mu, u)


def _estimator_snapshot(est: ModelEstimate) -> np.ndarray:
    d, k = est.n_treatments, est.n_strata
    if est.kind == "bernoulli":
        return np.array([[est.success_prob(j, t) for t in range(k)] for j in range(d)])
    if est.kind == "gaussian":
        return np.array([[est.mean(j, t) for t in range(k)] for j in range(d)])
    if est.kind == "powerlaw":
        return np.array([est.exponent(t) for t in range(k)])
    return est.count.astype(float)


def _index_from_uniform(weights: np.ndarray, u: float) -> int:
    cum = 0.0
    last = len(weights) - 1
    for idx, w in enumerate(weights):
        cum += w
        if u <= cum:
            return idx
    return last  # guards the < 1 ulp shortfall of the running sum


def sample_color(z: np.ndarray, u: float) -> int:
    """Colour whose cumulative interval (left-open, right-closed) holds u."""
    return _index_from_uniform(z, u)


def interval_overlap(cum_target: np.ndarray, cum_source: np.ndarray, k: int) -> np.ndarray:
    """Overlap of each target slot with source slot k, normalised to sum 1.

    ``cum_*`` are cumulative mass vectors of length d+1 starting at 0; slot j
    is the interval (cum[j], cum[j+1]].  This is the one formula behind both
    the step weighting vector (urn proportions) and the limit g-vector
    (target allocations).
    """
    width = cum_source[k + 1] - cum_source[k]
    if width <= 0.0:
        raise UrnError("source colour has no mass")
    lo = cum_source[k]
    hi = cum_source[k + 1]
    out = np.minimum(cum_target[1:], hi) - np.maximum(cum_target[:-1], lo)
    np.clip(out, 0.0, None, out=out)
    return out / width


def weighting_vector(Z: np.ndarray, t: int, s: int, k: int) -> np.ndarray:
    """Expected colour indicator for stratum t given colour k drawn in stratum s."""
    d = Z.shape[0]
    if t == s:
        e = np.zeros(d)
        e[k] = 1.0
        return e
    cum_t = np.concatenate(([0.0], np.cumsum(Z[:, t])))
    cum_s = np.concatenate(([0.0], np.cumsum(Z[:, s])))
    return interval_overlap(cum_t, cum_s, k)


def weighting_matrix(Z: np.ndarray, s: int, k: int) -> np.ndarray:
    """All strata at once: column t is weighting_vector(Z, t, s, k)."""
    d, K = Z.shape
    X = np.empty((d, K))
    for t in range(K):
        X[:, t] = weighting_vector(Z, t, s, k)
    return X


# ---------------------------------------------------------------------------
# replacement matrix
# ---------------------------------------------------------------------------


def replacement_matrix(
    family: ResponseFamily,
    rule: ReplacementRule,
    s: int,
    k: int,
    y: float,
) -> np.ndarray:
    """Per-stratum replacement blocks D, shape (K, d, d).

    ``family`` is whatever governs the urn update: the true response family
    in known-distribution mode, the plug-in estimate otherwise.  Column j of
    D[t] is the expected reinforcement for arm j in stratum t given that arm
    k responded y in stratum s.  Every column sums to 1, and column k of
    D[s] equals the directly observed reinforcement.
    """
    d, K = family.n_treatments, family.n_strata
    out = np.empty((K, d, d))
    src = family.cell(k, s)
    if isinstance(src, GaussianCell):
        scale = y - src.mean
        for t in range(K):
            for j in range(d):
                tgt = family.cell(j, t)
                # the observed cell reproduces the raw response exactly
                y_t = y if (t == s and j == k) else tgt.mean + (tgt.sd / src.sd) * scale
                out[t, :, j] = rule_column(rule, j, t, y_t, family)
        return out
    if isinstance(src, PowerLawCell):
        for t in range(K):
            for j in range(d):
                tgt = family.cell(j, t)
                y_t = y if (t == s and j == k) else y ** (tgt.exponent / src.exponent)
                out[t, :, j] = rule_column(rule, j, t, y_t, family)
        return out
    if isinstance(src, BernoulliCell):
        lo, hi = preimage(family, k, s, y)
        for t in range(K):
            for j in range(d):
                out[t, :, j] = _bernoulli_column(family, rule, j, t, lo, hi)
        return out
    # empirical / mixed: integrate the rule over the preimage interval
    lo, hi = preimage(family, k, s, y)
    for t in range(K):
        for j in range(d):
            out[t, :, j] = _column_average(family, rule, j, t, lo, hi)
    return out


def _bernoulli_column(family, rule, j, t, lo, hi):
    split = 1.0 - family.cell(j, t).success
    w = (hi - max(lo, min(hi, split))) / (hi - lo)
    return w * rule_column(rule, j, t, 1.0, family) + (1.0 - w) * rule_column(
        rule, j, t, 0.0, family
    )


def _column_average(family, rule, j, t, lo, hi, tol: float = 1e-10):
    """Average of the reinforcement column over quantile levels (lo, hi]."""
    if hi <= lo:  # degenerate preimage: continuous source cell
        v = min(max(lo, 1e-15), 1.0 - 1e-15)
        return rule_column(rule, j, t, quantile(family, j, t, v), family)
    tgt = family.cell(j, t)
    if isinstance(tgt, BernoulliCell):
        return _bernoulli_column(family, rule, j, t, lo, hi)
    if isinstance(tgt, EmpiricalCell) and tgt.values:
        # step quantile: exact sum over the sample blocks meeting (lo, hi]
        m = len(tgt.values)
        first = int(np.floor(lo * m))
        last = int(np.ceil(hi * m))
        acc = np.zeros(family.n_treatments)
        for block in range(first, last):
            blo, bhi = block / m, (block + 1) / m
            w = min(hi, bhi) - max(lo, blo)
            if w > 0:
                acc += w * rule_column(rule, j, t, tgt.values[block], family)
        return acc / (hi - lo)
    # continuous target under a discrete source: Gauss-Legendre with doubling
    prev = None
    for nodes in (64, 128, 256, 512, 1024):
        x, w = np.polynomial.legendre.leggauss(nodes)
        vs = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        acc = np.zeros(family.n_treatments)
        for v, wt in zip(vs, w):
            acc += wt * rule_column(rule, j, t, quantile(family, j, t, v), family)
        acc *= 0.5  # scaled by (hi-lo)/2 then divided by (hi-lo)
        if prev is not None and np.max(np.abs(acc - prev)) < tol:
            return acc
        prev = acc
    return prev


# ---------------------------------------------------------------------------
# the trial loop
# ---------------------------------------------------------------------------


def step(
    state: UrnState,
    design: TrialDesign,
    uniforms: np.ndarray,
) -> tuple[UrnState, TrialRecord]:
    """Treat one patient: sample stratum and colour, observe the response,
    update every urn, then fold the response into the running estimates.

    ``uniforms`` supplies the three independent U(0,1) draws of the step in
    the order (stratum, colour, response level); the response is always
    generated from the true family through the shared level so that the
    replacement matrix and the observed outcome stay coupled.
    """
    u_cov, u_col, u_resp = float(uniforms[0]), float(uniforms[1]), float(uniforms[2])
    t = sample_covariate(design.covariates, u_cov, state)
    Z = state.Z
    k = sample_color(Z[:, t], u_col)
    y = quantile(design.family, k, t, min(max(u_resp, 1e-300), 1.0 - 1e-16))
    eval_family = design.family if design.known_model else state.estimate.as_family()
    D = replacement_matrix(eval_family, rule=design.rule, s=t, k=k, y=y)
    X = weighting_matrix(Z, s=t, k=k)
    for tt in range(design.n_strata):
        state.Y[:, tt] += D[tt] @ X[:, tt]
    update_estimate(state.estimate, k, t, y)
    state.assignments[k, t] += 1
    state.totals[k] += 1
    state.n += 1
    record = TrialRecord(
        step=state.n, stratum=t, arm=k, response=y, proportions=state.Z.copy()
    )
    return state, record


def run_trial(
    design: TrialDesign,
    n_patients: int,
    seed: int | np.random.SeedSequence,
) -> TrialTrajectory:
    """Simulate one trial; bitwise deterministic in (design, n, seed)."""
    if n_patients < 0:
        raise ValueError("n_patients must be nonnegative")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    uniforms = rng.random((n_patients, 3))
    state = new_state(design)
    d, K = design.n_treatments, design.n_strata
    stratum = np.zeros(n_patients, dtype=np.int64)
    arm = np.zeros(n_patients, dtype=np.int64)
    response = np.zeros(n_patients)
    props = np.zeros((n_patients, d, K))
    for i in range(n_patients):
        _, rec = step(state, design, uniforms[i])
        stratum[i] = rec.stratum
        arm[i] = rec.arm
        response[i] = rec.response
        props[i] = rec.proportions
    return TrialTrajectory(
        design=design,
        seed=seed,
        stratum=stratum,
        arm=arm,
        response=response,
        proportions=props,
        final=state,
    )
