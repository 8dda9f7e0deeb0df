"""Command-line front-end.

Subcommands: simulate, asymptotics, verify-clt, case-study,
check-assumptions.  Exit codes: 0 success, 1 tolerance/assumption failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import engine
from .asymptotics import compute_report
from .estimators import default_estimator_specs
from .harness import (
    ConfigError,
    HarnessConfig,
    case_study_table,
    monte_carlo,
    sepsicool_case_study,
    trial_summary,
    write_trajectory_csv,
    write_trajectory_json,
)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="funcurn",
        description="Covariate-adjusted response-adaptive urn: simulation and limit theory",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--n", type=int, default=None, help="patients per trial override")
        sp.add_argument("--reps", type=int, default=None, help="replication count override")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default=None)

    common(sub.add_parser("simulate", help="run one trial, write trajectory + summary"))
    common(sub.add_parser("asymptotics", help="write the asymptotic report JSON"))
    common(sub.add_parser("verify-clt", help="Monte-Carlo check of the fluctuation covariance"))
    cs = sub.add_parser("case-study", help="built-in case studies")
    cs.add_argument("name", choices=("sepsicool",))
    common(cs, config_required=False)
    common(sub.add_parser("check-assumptions", help="spectral/structural diagnostics"))
    return p


def _apply_overrides(config: HarnessConfig, args) -> HarnessConfig:
    run = config.run
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.n is not None:
        updates["patients"] = args.n
    if args.reps is not None:
        updates["replications"] = args.reps
    if args.threads is not None:
        updates["threads"] = args.threads
    if updates:
        run = dataclasses.replace(run, **updates)
    output = config.output
    out_updates = {}
    if args.out is not None:
        out_updates["directory"] = str(args.out)
    if args.format is not None:
        out_updates["format"] = args.format
    if out_updates:
        output = dataclasses.replace(output, **out_updates)
    return dataclasses.replace(config, run=run, output=output)


def _outdir(config: HarnessConfig) -> Path:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_simulate(config: HarnessConfig) -> int:
    out = _outdir(config)
    result = engine.simulate_trial(config.design, config.run.patients, config.run.seed)
    d, K = config.design.n_treatments, config.design.n_strata
    if config.output.format == "json":
        write_trajectory_json(out / "trajectory.json", result, d, K)
    else:
        write_trajectory_csv(out / "trajectory.csv", result, d, K)
    _write_json(out / "summary.json", trial_summary(result, config.design, config.run.seed))
    print(f"wrote trajectory + summary to {out} ({engine.backend_name()} engine)")
    return 0


def _cmd_asymptotics(config: HarnessConfig) -> int:
    kind = config.design.family.kind()
    specs = (
        ()
        if config.verification.estimators == "none" or kind is None
        else default_estimator_specs(kind, config.verification.theorem)
    )
    report = compute_report(
        config.design.family,
        config.design.rule,
        config.design.covariates,
        mode=config.verification.theorem,
        estimator_specs=specs,
    )
    out = _outdir(config)
    _write_json(out / "asymptotics.json", report.to_json_dict())
    print(f"limit allocation per stratum: {np.round(report.v, 6).tolist()}")
    print(f"report valid: {report.valid}; wrote {out / 'asymptotics.json'}")
    return 0 if report.valid else 1


def _cmd_verify(config: HarnessConfig) -> int:
    report = monte_carlo(config)
    out = _outdir(config)
    _write_json(out / "verification.json", report.to_json_dict())
    print(report.table())
    if report.insufficient_replications:
        print("insufficient replications for a covariance check (need >= 100)")
        return 1
    return 0 if report.passed else 1


def _cmd_case_study(config: HarnessConfig) -> int:
    study = sepsicool_case_study(
        replications=config.run.replications,
        patients=config.run.patients,
        seed=config.run.seed,
        threads=config.run.threads,
    )
    out = _outdir(config)
    _write_json(out / "case_study.json", study)
    print(case_study_table(study))
    return 0 if study["agreement"] else 1


def _cmd_check(config: HarnessConfig) -> int:
    from .asymptotics import check_assumptions

    kind = config.design.family.kind()
    specs = (
        ()
        if config.verification.estimators == "none" or kind is None
        else default_estimator_specs(kind, config.verification.theorem)
    )
    diag = check_assumptions(
        config.design.family,
        config.design.rule,
        config.design.covariates,
        estimator_specs=specs,
        mode=config.verification.theorem,
    )
    out = _outdir(config)
    _write_json(out / "assumptions.json", diag)
    for key, section in diag.items():
        if isinstance(section, dict) and "passed" in section:
            print(f"{key:<22} {'pass' if section['passed'] else 'FAIL'}")
    print(f"overall: {'pass' if diag['assumptions_pass'] else 'FAIL'}")
    return 0 if diag["assumptions_pass"] else 1


_CASE_STUDY_DEFAULTS = {
    "design": {
        "model": {"kind": "bernoulli", "success": [[0.657, 0.657], [0.842, 0.406]]},
        "rule": {"kind": "play_the_winner", "n_treatments": 2},
        "covariate": {"weights": [0.5, 0.5]},
    },
    "run": {"patients": 450, "replications": 10000, "seed": 2026},
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config is not None:
            config = HarnessConfig.from_file(args.config)
        elif args.command == "case-study":
            config = HarnessConfig.from_dict(_CASE_STUDY_DEFAULTS)
        else:
            print("a --config file is required", file=sys.stderr)
            return 2
        config = _apply_overrides(config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "simulate":
            return _cmd_simulate(config)
        if args.command == "asymptotics":
            return _cmd_asymptotics(config)
        if args.command == "verify-clt":
            return _cmd_verify(config)
        if args.command == "case-study":
            return _cmd_case_study(config)
        if args.command == "check-assumptions":
            return _cmd_check(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
