"""Batch front-end: configuration, Monte-Carlo verification, reporting.

A single JSON document configures a design plus run/verification/output
settings; the harness runs replications through the fastest engine, compares
empirical first and second moments against the computed limit theory, and
writes deterministic CSV/JSON artifacts.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .asymptotics import (
    AsymptoticReport,
    compute_report,
    expected_outcome,
    limiting_H,
    target_allocation,
)
from .designs import (
    SEPSICOOL_SUCCESS,
    play_the_winner_design,
    sepsicool_design,
    sepsicool_pooled_success,
)
from .engine import ReplicationResult, run_replications
from .estimators import EstimatorSpec, default_estimator_specs
from .models import (
    CovariateSpace,
    EstimatePriors,
    bernoulli_family,
    empirical_family,
    gaussian_family,
    power_law_family,
)
from .rules import build_rule
from .urn import TrialDesign

__all__ = [
    "ConfigError",
    "HarnessConfig",
    "RunSettings",
    "VerifySettings",
    "VerificationReport",
    "monte_carlo",
    "trajectory_rows",
    "write_trajectory_csv",
    "write_trajectory_json",
    "trial_summary",
    "sepsicool_case_study",
    "first_order_summary",
    "replication_w_matrix",
]

TRAJECTORY_SCHEMA = "funcurn-trajectory-v1"


class ConfigError(ValueError):
    """Malformed harness configuration; message carries the offending path."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    patients: int = 1000
    replications: int = 1000
    seed: int = 0
    threads: int = 0


@dataclass(frozen=True)
class VerifySettings:
    theorem: str = "strata"          # strata | adjusted
    rel_tol: float = 0.15
    abs_tol_sigmas: float = 3.0
    estimators: str = "default"      # default | none


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    format: str = "csv"


@dataclass(frozen=True)
class HarnessConfig:
    design: TrialDesign
    run: RunSettings = field(default_factory=RunSettings)
    verification: VerifySettings = field(default_factory=VerifySettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    @classmethod
    def from_file(cls, path: str | Path) -> "HarnessConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "HarnessConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
        design = _parse_design(doc.get("design"), "design")
        run = _parse_section(doc.get("run", {}), "run", RunSettings)
        verification = _parse_section(doc.get("verification", {}), "verification", VerifySettings)
        output = _parse_section(doc.get("output", {}), "output", OutputSettings)
        if run.patients < 0:
            raise ConfigError("run.patients: must be nonnegative")
        if run.replications < 1:
            raise ConfigError("run.replications: must be positive")
        if verification.theorem not in ("strata", "adjusted"):
            raise ConfigError("verification.theorem: expected 'strata' or 'adjusted'")
        if verification.estimators not in ("default", "none"):
            raise ConfigError("verification.estimators: expected 'default' or 'none'")
        return cls(design=design, run=run, verification=verification, output=output)


def _parse_section(doc, where, cls):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown key")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_design(doc, where) -> TrialDesign:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    model = doc.get("model")
    if not isinstance(model, dict) or "kind" not in model:
        raise ConfigError(f"{where}.model: expected an object with a 'kind'")
    kind = model["kind"]
    try:
        if kind == "bernoulli":
            family = bernoulli_family(model["success"])
        elif kind == "gaussian":
            family = gaussian_family(model["mean"], model["sd"])
        elif kind == "powerlaw":
            family = power_law_family(
                model["exponent"], n_treatments=int(model.get("treatments", 2))
            )
        elif kind == "empirical":
            family = empirical_family(model["samples"])
        else:
            raise ConfigError(f"{where}.model.kind: unknown kind {kind!r}")
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{where}.model: missing parameter {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.model: {exc}") from exc

    rule_doc = doc.get("rule")
    if not isinstance(rule_doc, dict) or "kind" not in rule_doc:
        raise ConfigError(f"{where}.rule: expected an object with a 'kind'")
    rule_params = {k: v for k, v in rule_doc.items() if k != "kind"}
    if rule_doc["kind"] == "gaussian_test" and "reference_mean" in rule_params:
        rule_params["reference_mean"] = tuple(rule_params["reference_mean"])
    try:
        rule = build_rule(rule_doc["kind"], **rule_params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.rule: {exc}") from exc

    cov = doc.get("covariate", {})
    if not isinstance(cov, dict) or "weights" not in cov:
        raise ConfigError(f"{where}.covariate: expected an object with 'weights'")
    try:
        covariates = CovariateSpace(np.asarray(cov["weights"], dtype=float))
    except ValueError as exc:
        raise ConfigError(f"{where}.covariate.weights: {exc}") from exc

    priors_doc = doc.get("priors", {})
    if not isinstance(priors_doc, dict):
        raise ConfigError(f"{where}.priors: expected an object")
    try:
        priors = EstimatePriors(**priors_doc)
    except TypeError as exc:
        raise ConfigError(f"{where}.priors: {exc}") from exc

    try:
        return TrialDesign(
            family=family,
            rule=rule,
            covariates=covariates,
            known_model=bool(doc.get("known_model", False)),
            estimate_kind=doc.get("estimate_kind"),
            priors=priors,
            clip_eps=doc.get("clip_eps"),
            sigma_known=bool(doc.get("sigma_known", True)),
            n_burn=int(doc.get("warmup", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# replication summaries -> W rows
# ---------------------------------------------------------------------------


def _spec_cell_value(spec: EstimatorSpec, res: ReplicationResult, t, j) -> float:
    stat = res.sum_neglog if spec.statistic == "neglog" else res.sum_y
    if spec.mode == "stratified":
        c = res.count[j, t]
        return stat[j, t] / c if c > 0 else np.nan
    if spec.mode == "stratified-shared":
        c = res.count[:, t].sum()
        return stat[:, t].sum() / c if c > 0 else np.nan
    if spec.mode == "adjusted":
        c = res.count[j, :].sum()
        return stat[j, :].sum() / c if c > 0 else np.nan
    c = res.count.sum()
    return stat.sum() / c if c > 0 else np.nan


def replication_w_matrix(
    results: list[ReplicationResult],
    mode: str,
    specs: tuple[EstimatorSpec, ...],
    d: int,
    K: int,
) -> np.ndarray:
    """Rows of observed W vectors matching the asymptotic report's labels."""
    rows = []
    for res in results:
        parts = [res.Z.T.reshape(-1)]  # Z[t, arm] stratum-major
        if mode == "strata":
            strat_tot = res.Nstrat.sum(axis=0).astype(float)
            with np.errstate(invalid="ignore", divide="ignore"):
                ntilde = np.where(strat_tot > 0, res.Nstrat / strat_tot, np.nan)
            parts.append(ntilde.T.reshape(-1))
            for spec in specs:
                if spec.mode == "stratified":
                    parts.append(
                        np.array(
                            [
                                _spec_cell_value(spec, res, t, j)
                                for t in range(K)
                                for j in range(d)
                            ]
                        )
                    )
                else:
                    parts.append(
                        np.array([_spec_cell_value(spec, res, t, None) for t in range(K)])
                    )
        else:
            parts.append(res.Ntot / res.n)
            for spec in specs:
                if spec.mode == "adjusted":
                    parts.append(
                        np.array([_spec_cell_value(spec, res, None, j) for j in range(d)])
                    )
                else:
                    parts.append(np.array([_spec_cell_value(spec, res, None, None)]))
        rows.append(np.concatenate(parts))
    return np.asarray(rows)


def _jackknife_cov_se(B: np.ndarray) -> np.ndarray:
    """Delete-one standard errors for every empirical covariance entry."""
    R, m = B.shape
    if R < 3:
        return np.full((m, m), np.inf)
    total = B.sum(axis=0)
    C = B.T @ B
    covs = np.empty((R, m, m))
    chunk = max(1, int(2e7 // (m * m)))
    for lo in range(0, R, chunk):
        hi = min(R, lo + chunk)
        Bc = B[lo:hi]
        mean_i = (total[None, :] - Bc) / (R - 1)
        cross = C[None, :, :] - np.einsum("ri,rj->rij", Bc, Bc)
        covs[lo:hi] = (
            cross - (R - 1) * np.einsum("ri,rj->rij", mean_i, mean_i)
        ) / (R - 2)
    center = covs.mean(axis=0)
    var = ((covs - center) ** 2).sum(axis=0) * (R - 1) / R
    return np.sqrt(var)


@dataclass
class VerificationReport:
    """Empirical fluctuation moments against the computed limit theory."""

    theorem: str
    labels: list[str]
    patients: int
    replications: int
    theory_w: np.ndarray
    theory_sigma: np.ndarray
    empirical_mean: np.ndarray
    empirical_sigma: np.ndarray
    cov_se: np.ndarray
    z_scores: np.ndarray
    rel_tol: float
    abs_tol_sigmas: float
    entry_passed: np.ndarray
    insufficient_replications: bool
    assumptions_pass: bool
    passed: bool
    engine: str
    threads: int
    seconds: float
    diagnostics: dict

    def canonical_dict(self) -> dict:
        """Scientific content only: identical for identical (config, seed),
        independent of thread count and wall time."""
        return {
            "theorem": self.theorem,
            "labels": self.labels,
            "patients": self.patients,
            "replications": self.replications,
            "theory_w": self.theory_w.tolist(),
            "theory_sigma": self.theory_sigma.tolist(),
            "empirical_mean": self.empirical_mean.tolist(),
            "empirical_sigma": self.empirical_sigma.tolist(),
            "cov_se": self.cov_se.tolist(),
            "z_scores": self.z_scores.tolist(),
            "rel_tol": self.rel_tol,
            "abs_tol_sigmas": self.abs_tol_sigmas,
            "entry_passed": self.entry_passed.astype(int).tolist(),
            "insufficient_replications": self.insufficient_replications,
            "assumptions_pass": self.assumptions_pass,
            "passed": self.passed,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical_dict(), sort_keys=True).encode()

    def to_json_dict(self) -> dict:
        doc = self.canonical_dict()
        doc["meta"] = {
            "engine": self.engine,
            "threads": self.threads,
            "seconds": self.seconds,
        }
        doc["diagnostics"] = self.diagnostics
        return doc

    def table(self) -> str:
        """Human-readable per-entry comparison of the covariance diagonals."""
        lines = [
            f"{'component':<24}{'Sigma theory':>14}{'Sigma empir.':>14}{'tol':>12}{'ok':>4}"
        ]
        for i, lab in enumerate(self.labels):
            th = self.theory_sigma[i, i]
            em = self.empirical_sigma[i, i]
            tol = max(
                self.abs_tol_sigmas * self.cov_se[i, i], self.rel_tol * abs(th)
            )
            ok = "yes" if self.entry_passed[i, i] else "NO"
            lines.append(f"{lab:<24}{th:>14.6f}{em:>14.6f}{tol:>12.6f}{ok:>4}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def monte_carlo(config: HarnessConfig, report: AsymptoticReport | None = None) -> VerificationReport:
    """Parallel replications plus the entrywise covariance comparison.

    Entry (i, j) passes when |empirical - theory| <= max(abs_tol_sigmas *
    jackknife SE, rel_tol * |theory|).
    """
    t0 = time.perf_counter()
    design = config.design
    mode = config.verification.theorem
    d, K = design.n_treatments, design.n_strata
    kind = design.family.kind()
    specs: tuple[EstimatorSpec, ...]
    if config.verification.estimators == "none" or kind is None:
        specs = ()
    else:
        specs = default_estimator_specs(kind, mode)
    if report is None:
        report = compute_report(
            design.family,
            design.rule,
            design.covariates,
            mode=mode,
            estimator_specs=specs,
        )
    n = config.run.patients
    R = config.run.replications
    results = run_replications(
        design, n, R, config.run.seed, threads=config.run.threads
    )
    W = replication_w_matrix(results, mode, specs, d, K)
    B = np.sqrt(n) * (W - report.W[None, :])
    insufficient = R < 100
    if insufficient or not np.isfinite(B).all():
        m = len(report.W)
        emp_mean = B.mean(axis=0) if R else np.full(m, np.nan)
        emp_cov = np.full((m, m), np.nan)
        se = np.full((m, m), np.inf)
        entry_passed = np.zeros((m, m), dtype=bool)
        z = np.full(m, np.nan)
        passed = False
    else:
        emp_mean = B.mean(axis=0)
        emp_cov = np.cov(B.T, ddof=1)
        se = _jackknife_cov_se(B)
        diff = np.abs(emp_cov - report.Sigma)
        tol = np.maximum(
            config.verification.abs_tol_sigmas * se,
            config.verification.rel_tol * np.abs(report.Sigma),
        )
        entry_passed = diff <= tol
        with np.errstate(invalid="ignore", divide="ignore"):
            z = emp_mean / np.sqrt(np.diag(report.Sigma) / R)
        passed = bool(entry_passed.all()) and report.diagnostics.get(
            "assumptions_pass", True
        )
    return VerificationReport(
        theorem=mode,
        labels=report.labels,
        patients=n,
        replications=R,
        theory_w=report.W,
        theory_sigma=report.Sigma,
        empirical_mean=emp_mean,
        empirical_sigma=emp_cov,
        cov_se=se,
        z_scores=z,
        rel_tol=config.verification.rel_tol,
        abs_tol_sigmas=config.verification.abs_tol_sigmas,
        entry_passed=entry_passed,
        insufficient_replications=insufficient,
        assumptions_pass=bool(report.diagnostics.get("assumptions_pass", True)),
        passed=passed,
        engine=engine.backend_name(),
        threads=config.run.threads,
        seconds=time.perf_counter() - t0,
        diagnostics=report.diagnostics,
    )


# ---------------------------------------------------------------------------
# trajectory export
# ---------------------------------------------------------------------------


def trajectory_rows(result: ReplicationResult, d: int, K: int):
    """Per-patient records with running urn proportions and cell counts."""
    if result.stratum is None:
        raise ValueError("replication was run without recording")
    n = len(result.stratum)
    counts = np.zeros((d, K), dtype=np.int64)
    for i in range(n):
        counts[result.arm[i], result.stratum[i]] += 1
        row = {
            "n": i + 1,
            "stratum": int(result.stratum[i]) + 1,
            "arm": int(result.arm[i]) + 1,
            "response": float(result.response[i]),
        }
        for t in range(K):
            for j in range(d):
                row[f"Z_t{t + 1}_arm{j + 1}"] = float(result.Z_path[i, j, t])
        for t in range(K):
            for j in range(d):
                row[f"N_t{t + 1}_arm{j + 1}"] = int(counts[j, t])
        yield row


def _trajectory_header(d: int, K: int) -> list[str]:
    cols = ["n", "stratum", "arm", "response"]
    cols += [f"Z_t{t + 1}_arm{j + 1}" for t in range(K) for j in range(d)]
    cols += [f"N_t{t + 1}_arm{j + 1}" for t in range(K) for j in range(d)]
    return cols


def write_trajectory_csv(path: str | Path, result: ReplicationResult, d: int, K: int) -> None:
    cols = _trajectory_header(d, K)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in trajectory_rows(result, d, K):
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")


def write_trajectory_json(path: str | Path, result: ReplicationResult, d: int, K: int) -> None:
    rows = list(trajectory_rows(result, d, K))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"schema": TRAJECTORY_SCHEMA, "rows": rows}, fh, sort_keys=True)
        fh.write("\n")


def trial_summary(result: ReplicationResult, design: TrialDesign, seed: int) -> dict:
    d, K = design.n_treatments, design.n_strata
    strat_tot = result.Nstrat.sum(axis=0).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        strat_prop = np.where(strat_tot > 0, result.Nstrat / strat_tot, np.nan)
    return {
        "schema": TRAJECTORY_SCHEMA,
        "engine": engine.backend_name(),
        "seed": seed,
        "patients": result.n,
        "treatments": d,
        "strata": K,
        "urn_proportions": result.Z.tolist(),
        "assignments_per_stratum": result.Nstrat.tolist(),
        "stratum_allocation_proportions": np.nan_to_num(strat_prop, nan=-1.0).tolist(),
        "overall_allocation_counts": result.Ntot.tolist(),
        "overall_allocation_proportions": (
            (result.Ntot / result.n).tolist() if result.n else [0.0] * d
        ),
        "mean_response": float(result.sum_y.sum() / result.n) if result.n else None,
    }


# ---------------------------------------------------------------------------
# case study
# ---------------------------------------------------------------------------


def sepsicool_case_study(
    replications: int = 10_000,
    patients: int = 450,
    seed: int = 20_26,
    threads: int = 0,
) -> dict:
    """Expected-deaths table for the septic-shock cooling redesign.

    The headline numbers are computed analytically from the limiting
    allocations (with and without the severity covariate in the urn) and
    checked against a full simulation of the adaptive trial.  The simulated
    mean carries the finite-sample transient of the urn (the urn starts
    uniform), so the agreement tolerance is max(3 Monte-Carlo SEs, 1.5
    deaths).
    """
    design = sepsicool_design(known_model=False)
    mu = design.covariates.weights
    p = SEPSICOOL_SUCCESS
    rates = 1.0 - p
    K = p.shape[1]

    v = np.stack(
        [target_allocation(limiting_H(design.family, design.rule, t)) for t in range(K)]
    )
    with_covariate = expected_outcome(v, mu, rates, patients)

    pooled = sepsicool_pooled_success(mu)
    blind_design = play_the_winner_design(pooled[:, None], mu=[1.0])
    v_blind = target_allocation(limiting_H(blind_design.family, blind_design.rule, 0))
    blind = expected_outcome(np.tile(v_blind, (K, 1)), mu, rates, patients)

    results = run_replications(design, patients, replications, seed, threads=threads)
    deaths = np.array([res.n - res.sum_y.sum() for res in results])
    sim_mean = float(deaths.mean())
    sim_se = float(deaths.std(ddof=1) / np.sqrt(len(deaths)))
    gap = abs(sim_mean - with_covariate["total"])
    tolerance = max(3.0 * sim_se, 1.5)

    # stratified-inference variances 2 p (1-p) / v at equal stratum weights
    variance_table = [
        {
            "stratum": t + 1,
            "arm": j + 1,
            "variance": float(2.0 * p[j, t] * (1.0 - p[j, t]) / v[t, j]),
        }
        for t in range(K)
        for j in range(p.shape[0])
    ]

    return {
        "patients": patients,
        "replications": replications,
        "target_allocation": v.tolist(),
        "expected_deaths_with_covariate": with_covariate["total"],
        "expected_deaths_blind": blind["total"],
        "per_stratum_with_covariate": with_covariate["per_stratum"],
        "per_stratum_blind": blind["per_stratum"],
        "simulated_mean_deaths": sim_mean,
        "simulated_se": sim_se,
        "analytic_vs_simulated_gap": gap,
        "tolerance": tolerance,
        "agreement": bool(gap <= tolerance),
        "proportion_variances": variance_table,
        "engine": engine.backend_name(),
    }


def case_study_table(study: dict) -> str:
    lines = [
        "septic-shock cooling redesign, 450 patients",
        f"  expected deaths, covariate-adjusted urn : {study['expected_deaths_with_covariate']:.1f}",
        f"  expected deaths, covariate-blind urn    : {study['expected_deaths_blind']:.1f}",
        f"  simulated mean deaths ({study['replications']} reps)   : "
        f"{study['simulated_mean_deaths']:.2f} +- {study['simulated_se']:.3f}",
        f"  analytic vs simulated gap               : {study['analytic_vs_simulated_gap']:.2f}"
        f" (tolerance {study['tolerance']:.2f}) -> {'ok' if study['agreement'] else 'FAIL'}",
        "  asymptotic variance of sqrt(n)(p_hat - p) by (stratum, arm):",
    ]
    for row in study["proportion_variances"]:
        lines.append(
            f"    t={row['stratum']} arm={row['arm']}: {row['variance']:.4f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# first-order summaries
# ---------------------------------------------------------------------------


def first_order_summary(
    design: TrialDesign,
    n: int,
    replications: int,
    seed: int,
    threads: int = 0,
) -> dict:
    """Mean distances of Z_n(t) and N_n/n from their limits over replications."""
    K = design.n_strata
    v = np.stack(
        [target_allocation(limiting_H(design.family, design.rule, t)) for t in range(K)]
    )
    mu = design.covariates.weights
    target_overall = np.einsum("t,tj->j", mu, v)
    results = run_replications(design, n, replications, seed, threads=threads)
    z_err = np.zeros(K)
    n_err = 0.0
    for res in results:
        Z = res.Z
        for t in range(K):
            z_err[t] += np.linalg.norm(Z[:, t] - v[t])
        n_err += np.linalg.norm(res.Ntot / n - target_overall)
    return {
        "z_distance_per_stratum": (z_err / replications).tolist(),
        "allocation_distance": n_err / replications,
        "target_allocation": v.tolist(),
        "target_overall": target_overall.tolist(),
    }
