"""Backend selection and replication running.

The compiled kernel is used when the extension built; otherwise the
pure-Python twin takes over with identical semantics.  Designs that the
packed kernels cannot express (empirical or mixed response families,
adaptive covariate rules, more than 8 arms / 32 strata) run through the
object-path reference in funcurn.urn.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from .models import BernoulliCell, GaussianCell, PowerLawCell
from .rules import GaussianTest, IdentityOnUnit, PlayTheWinner, ZhangRosenberger
from .urn import TrialDesign, TrialTrajectory, UrnState, new_state, run_trial

try:
    from . import _kernel  # compiled extension

    _backend = _kernel
except ImportError:  # pragma: no cover - depends on the build environment
    _backend = _kernel_py

ENGINE = "compiled" if getattr(_backend, "COMPILED", False) else "python"

__all__ = [
    "ENGINE",
    "PackedDesign",
    "ReplicationResult",
    "pack_design",
    "run_packed",
    "run_replications",
    "simulate_trial",
    "backend_name",
    "available_backends",
]

_MODEL_KINDS = {"gaussian": 0, "bernoulli": 1, "powerlaw": 2}


@dataclass(frozen=True)
class PackedDesign:
    """Array-only view of a TrialDesign, ready for the scalar kernels."""

    d: int
    K: int
    model_kind: int
    rule_kind: int
    known_model: int
    sigma_known: int
    cum_mu: np.ndarray
    par: np.ndarray
    sd: np.ndarray
    ref_mean: np.ndarray
    ref_sd: float
    m_min: float
    eps_p: float
    n_burn: int
    prior_p: float
    prior_mean: float
    prior_sd: float
    prior_exponent: float


def pack_design(design: TrialDesign) -> PackedDesign | None:
    """Kernel-ready arrays, or None when the design needs the object path."""
    kind = design.family.kind()
    if kind not in _MODEL_KINDS:
        return None
    if design.estimate_kind is not None and design.estimate_kind != kind:
        return None
    if design.covariates.adaptive_rule is not None:
        return None
    d, K = design.n_treatments, design.n_strata
    if d > 8 or K > 32:
        return None
    rule = design.rule
    if isinstance(rule, PlayTheWinner):
        rule_kind = 0
        ref_mean = np.zeros(K)
        ref_sd = 1.0
        m_min = 0.0
    elif isinstance(rule, IdentityOnUnit):
        rule_kind = 1
        ref_mean = np.zeros(K)
        ref_sd = 1.0
        m_min = 0.0
    elif isinstance(rule, ZhangRosenberger):
        rule_kind = 2
        ref_mean = np.zeros(K)
        ref_sd = 1.0
        m_min = rule.mean_floor
    elif isinstance(rule, GaussianTest):
        if len(rule.reference_mean) != K:
            return None
        rule_kind = 3
        ref_mean = np.asarray(rule.reference_mean, dtype=float)
        ref_sd = rule.sd
        m_min = 0.0
    else:
        return None

    par = np.empty((d, K))
    sd = np.ones(d)
    for j in range(d):
        for t in range(K):
            cell = design.family.cell(j, t)
            if isinstance(cell, GaussianCell):
                par[j, t] = cell.mean
                sd[j] = cell.sd
            elif isinstance(cell, BernoulliCell):
                par[j, t] = cell.success
            elif isinstance(cell, PowerLawCell):
                par[j, t] = cell.exponent

    return PackedDesign(
        d=d,
        K=K,
        model_kind=_MODEL_KINDS[kind],
        rule_kind=rule_kind,
        known_model=int(design.known_model),
        sigma_known=int(design.sigma_known),
        cum_mu=np.cumsum(design.covariates.weights).astype(float),
        par=np.ascontiguousarray(par),
        sd=np.ascontiguousarray(sd),
        ref_mean=np.ascontiguousarray(ref_mean),
        ref_sd=float(ref_sd),
        m_min=float(m_min),
        eps_p=-1.0 if design.clip_eps is None else float(design.clip_eps),
        n_burn=int(design.n_burn),
        prior_p=design.priors.bernoulli_p,
        prior_mean=design.priors.gaussian_mean,
        prior_sd=design.priors.gaussian_sd,
        prior_exponent=design.priors.power_exponent,
    )


@dataclass
class ReplicationResult:
    """Final-state summary of one simulated trial."""

    n: int
    Y: np.ndarray
    Nstrat: np.ndarray
    Ntot: np.ndarray
    count: np.ndarray
    sum_y: np.ndarray
    sum_y2: np.ndarray
    sum_neglog: np.ndarray
    stratum: np.ndarray | None = None
    arm: np.ndarray | None = None
    response: np.ndarray | None = None
    Z_path: np.ndarray | None = None

    @property
    def Z(self) -> np.ndarray:
        return self.Y / self.Y.sum(axis=0, keepdims=True)


def run_packed(
    packed: PackedDesign,
    n: int,
    seed: int | np.random.SeedSequence,
    record: bool = False,
    backend=None,
) -> ReplicationResult:
    """One trial through the packed kernel; deterministic in (design, n, seed)."""
    be = backend if backend is not None else _backend
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    uniforms = rng.random((n, 3))
    d, K = packed.d, packed.K
    Y = np.ones((d, K))
    Nstrat = np.zeros((d, K), dtype=np.int64)
    Ntot = np.zeros(d, dtype=np.int64)
    count = np.zeros((d, K), dtype=np.int64)
    sum_y = np.zeros((d, K))
    sum_y2 = np.zeros((d, K))
    sum_neglog = np.zeros((d, K))
    if record:
        rec_stratum = np.zeros(n, dtype=np.int64)
        rec_arm = np.zeros(n, dtype=np.int64)
        rec_response = np.zeros(n)
        rec_Z = np.zeros((n, d, K))
    else:
        rec_stratum = np.zeros(0, dtype=np.int64)
        rec_arm = np.zeros(0, dtype=np.int64)
        rec_response = np.zeros(0)
        rec_Z = np.zeros((0, d, K))
    be.run_trial(
        n,
        uniforms,
        packed.d,
        packed.K,
        packed.model_kind,
        packed.rule_kind,
        packed.known_model,
        packed.sigma_known,
        packed.cum_mu,
        packed.par,
        packed.sd,
        packed.ref_mean,
        packed.ref_sd,
        packed.m_min,
        packed.eps_p,
        packed.n_burn,
        packed.prior_p,
        packed.prior_mean,
        packed.prior_sd,
        packed.prior_exponent,
        Y,
        Nstrat,
        Ntot,
        count,
        sum_y,
        sum_y2,
        sum_neglog,
        int(record),
        rec_stratum,
        rec_arm,
        rec_response,
        rec_Z,
    )
    return ReplicationResult(
        n=n,
        Y=Y,
        Nstrat=Nstrat,
        Ntot=Ntot,
        count=count,
        sum_y=sum_y,
        sum_y2=sum_y2,
        sum_neglog=sum_neglog,
        stratum=rec_stratum if record else None,
        arm=rec_arm if record else None,
        response=rec_response if record else None,
        Z_path=rec_Z if record else None,
    )


def _state_to_result(state: UrnState, n: int, traj: TrialTrajectory | None = None) -> ReplicationResult:
    est = state.estimate
    return ReplicationResult(
        n=n,
        Y=state.Y.copy(),
        Nstrat=state.assignments.copy(),
        Ntot=state.totals.copy(),
        count=est.count.copy(),
        sum_y=est.sum_y.copy(),
        sum_y2=est.sum_y2.copy(),
        sum_neglog=est.sum_neglog.copy(),
        stratum=None if traj is None else traj.stratum,
        arm=None if traj is None else traj.arm,
        response=None if traj is None else traj.response,
        Z_path=None if traj is None else traj.proportions,
    )


def _run_one(design, packed, n, seed, record):
    if packed is not None:
        return run_packed(packed, n, seed, record=record)
    traj = run_trial(design, n, seed)
    return _state_to_result(traj.final, n, traj if record else None)


def run_replications(
    design: TrialDesign,
    n: int,
    reps: int,
    master_seed: int,
    threads: int = 0,
    record: bool = False,
) -> list[ReplicationResult]:
    """Independent replications with per-replication derived seed streams.

    Replication r uses SeedSequence(master_seed, r); results land in slot r
    regardless of completion order, so the output is identical for any
    thread count.
    """
    packed = pack_design(design)
    seeds = [np.random.SeedSequence(entropy=master_seed, spawn_key=(r,)) for r in range(reps)]
    if threads == 0:
        threads = min(os.cpu_count() or 1, 16)
    results: list[ReplicationResult | None] = [None] * reps
    if threads <= 1 or reps == 1:
        for r in range(reps):
            results[r] = _run_one(design, packed, n, seeds[r], record)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(_run_one, design, packed, n, seeds[r], record): r
                for r in range(reps)
            }
            for fut, r in futures.items():
                results[r] = fut.result()
    return results  # type: ignore[return-value]


def simulate_trial(design: TrialDesign, n: int, seed: int) -> ReplicationResult:
    """Single recorded trial through the fastest applicable path."""
    packed = pack_design(design)
    return _run_one(design, packed, n, seed, record=True)


def backend_name() -> str:
    return ENGINE


def available_backends() -> dict[str, object]:
    out = {"python": _kernel_py}
    if ENGINE == "compiled":
        out["compiled"] = _backend
    return out
