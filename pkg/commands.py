"""
This module defines the command-line subcommands of ctptmed.

Each subcommand registers itself in the global `COMMANDS` list through the
`register_command` decorator, together with a function that adds its
arguments to the parser. Handlers receive the parsed arguments and return the
process exit code; library errors propagate to the entry script, which maps
them to exit codes.
"""

import argparse
import json
import logging
import math
import os
import sys
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from typing import Any

import numpy as np
from tqdm import tqdm

import ctpt
from config import Settings
from datatypes import (
    ChainConfig,
    Command,
    CtptSpec,
    Diagnostics,
    ErrorFamily,
    Event,
    ExperimentResult,
    MediationData,
    MediationResult,
    NullPartition,
    PriorConfig,
    RegressionProblem,
    StudyConfig,
    parse_tail,
)
from errors import CtptmedError, DataParseError, MomentUndefinedError, ScenarioError, relabel
from events import register_event_handler, unregister_event_handler
from evidence import compare_families, fit_evidence, normal_flat_log_evidence
from mcmc import diagnose
from mediation import (
    MEDIATOR_LABEL,
    OUTCOME_LABEL,
    fit_mediation,
    hpd_interval,
    mediator_problem,
    outcome_problem,
    partition_from_odds,
    summarize,
)
from regression import prior_logpdf_gamma, prior_logpdf_nu, residual_shape, sigma_moment_bound, validate
from simulation import run_power, run_recovery
from special_math import SeededRng
from utils import build_design, load_csv, load_scenario, numeric_column, report_envelope, write_csv, write_json_report

logger: logging.Logger = logging.getLogger(__name__)

COMMANDS: list[Command] = []


def register_command(
    name: str,
    help_text: str,
    configure: Callable[[argparse.ArgumentParser], None],
) -> Callable[[Callable[[argparse.Namespace], int]], Callable[[argparse.Namespace], int]]:
    """
    Decorator to register a function as a subcommand handler.

    Args:
        name: The subcommand name.
        help_text: A description shown in the CLI help.
        configure: Adds the subcommand's arguments to its parser.

    Returns:
        The decorator function.
    """
    def decorator(func: Callable[[argparse.Namespace], int]) -> Callable[[argparse.Namespace], int]:
        logger.debug(f"Registering command '{name}'")
        COMMANDS.append(Command(name=name, handler=func, configure=configure, help_text=help_text))
        return func

    return decorator


@contextmanager
def _progress_bar(event: Event, total: int | None, unit: str) -> Iterator[tqdm]:
    """A tqdm bar on stderr that advances on every `event` while the block runs."""
    bar = tqdm(total=total, file=sys.stderr, unit=unit)

    def advance(*args: Any) -> None:
        if event is Event.REPLICATION_FINISHED:
            bar.set_description(args[0])
        bar.update(1)

    register_event_handler("cli", event)(advance)
    try:
        yield bar
    finally:
        unregister_event_handler(event, advance)
        bar.close()


@register_event_handler("cli", Event.EXPERIMENT_FINISHED)
def _on_experiment_finished(result: ExperimentResult) -> None:
    if result.mode == "recovery":
        logger.info(f"{result.scenario}/{result.family.value}: coverage {result.coverage}, "
                    f"{result.failures} of {result.replications} replications failed")
    else:
        logger.info(f"{result.scenario}/{result.family.value}: TPR {result.tpr:.3f}, FPR {result.fpr:.3f} "
                    f"at cutoff {result.cutoff:g}, {result.failures} of {result.replications} replications failed")


# --- shared options ---

_SETTING_FLAGS: dict[str, str] = {
    "seed": "seed",
    "threads": "threads",
    "iterations": "total_iterations",
    "burn_in": "burn_in_fraction",
    "chains": "fit_chains",
    "sim_chains": "simulation_chains",
    "adapt_window": "adapt_window",
    "target_accept": "target_accept",
    "gamma_shape": "gamma_shape",
    "gamma_rate": "gamma_rate",
    "gamma_lower": "gamma_lower",
    "gamma_upper": "gamma_upper",
    "nu_rate": "nu_rate",
    "q00": "q00",
    "q01": "q01",
    "q10": "q10",
    "replications": "replications",
    "resamples": "bootstrap_resamples",
    "level": "bootstrap_level",
    "cutoff": "bayes_factor_cutoff",
    "intercept": "add_intercept",
    "hpd": "report_hpd",
    "output_dir": "output_dir",
}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with settings; flags override it")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--iterations", type=int, help="Chain length including burn-in")
    parser.add_argument("--burn-in", type=float, help="Share of each chain discarded as burn-in")
    parser.add_argument("--adapt-window", type=int)
    parser.add_argument("--target-accept", type=float)
    parser.add_argument("--gamma-shape", type=float)
    parser.add_argument("--gamma-rate", type=float)
    parser.add_argument("--gamma-lower", type=float)
    parser.add_argument("--gamma-upper", type=float)
    parser.add_argument("--nu-rate", type=float)
    parser.add_argument("--output", help="Report path (stdout when omitted)")


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    _add_run_options(parser)
    parser.add_argument("--chains", type=int)
    parser.add_argument("--family", type=ErrorFamily, default=ErrorFamily.FULL,
                        choices=list(ErrorFamily), metavar="{full,gamma-only,nu-only,normal}")
    parser.add_argument("--no-intercept", dest="intercept", action="store_const", const=False,
                        default=None, help="Do not add an intercept column")
    parser.add_argument("--hpd", action="store_const", const=True, default=None,
                        help="Also report shortest (HPD) 95%% intervals")


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Settings from the optional --config JSON file, overridden by explicit flags."""
    overrides: dict[str, Any] = {}
    config_path: str | None = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                overrides.update(json.load(f))
        except json.JSONDecodeError as e:
            raise DataParseError(f"Config file {config_path} is not valid JSON: {e}")
    for flag, field_name in _SETTING_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    return Settings(**overrides)


def chain_config(settings: Settings, n_chains: int) -> ChainConfig:
    return ChainConfig(
        total_iterations=settings.total_iterations,
        burn_in_fraction=settings.burn_in_fraction,
        n_chains=n_chains,
        adapt_window=settings.adapt_window,
        target_accept=settings.target_accept,
        seed=settings.seed,
    )


def prior_config(settings: Settings) -> PriorConfig:
    return PriorConfig(
        gamma_shape=settings.gamma_shape,
        gamma_rate=settings.gamma_rate,
        gamma_support=(settings.gamma_lower, settings.gamma_upper),
        nu_rate=settings.nu_rate,
    )


def _shape_report(design: np.ndarray, response: np.ndarray) -> dict[str, float]:
    skewness, kurtosis = residual_shape(design, response)
    return {"skewness": skewness, "kurtosis": kurtosis}


def _diagnostics_report(diagnostics: Diagnostics) -> dict[str, Any]:
    return diagnostics.to_dict()


# --- fit ---

def _configure_fit(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("csv", help="CSV file with a header row")
    parser.add_argument("--response", required=True)
    parser.add_argument("--predictors", nargs="+", default=[])
    _add_fit_options(parser)


@register_command("fit", "Fit a CTPT-error linear regression", _configure_fit)
def cmd_fit(args: argparse.Namespace) -> int:
    settings: Settings = resolve_settings(args)
    frame = load_csv(args.csv)
    design, names = build_design(frame, args.predictors, settings.add_intercept)
    response = numeric_column(frame, args.response)
    problem = RegressionProblem(design, response, args.family, prior_config(settings), names)
    validate(problem)

    logger.info(f"Fitting {args.response} ~ {' + '.join(names)} with the {args.family.label} family")
    with _progress_bar(Event.CHAIN_FINISHED, settings.fit_chains, "chain"):
        draws, evidence = fit_evidence(problem, chain_config(settings, settings.fit_chains))
    report: dict[str, Any] = report_envelope("fit", settings.model_dump(), settings.seed)
    report.update(
        family=args.family,
        n=problem.n,
        k=problem.k,
        columns=list(names),
        summaries={name: summarize(draws.column(name)) for name in draws.names},
        diagnostics=_diagnostics_report(diagnose(draws)),
        sigma_moment_bound=sigma_moment_bound(problem.n, problem.k),
        evidence=evidence.to_dict(),
        residual_shape=_shape_report(design, response),
    )
    if args.family is ErrorFamily.NORMAL:
        report["normal_flat_log_evidence"] = normal_flat_log_evidence(design, response)
    if settings.report_hpd:
        report["hpd"] = {name: hpd_interval(draws.column(name)) for name in draws.names}
    write_json_report(args.output, report)
    return 0


# --- mediate ---

def _configure_mediate(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("csv", help="CSV file with a header row")
    parser.add_argument("--x", required=True, help="Independent variable column")
    parser.add_argument("--m", required=True, help="Mediator column")
    parser.add_argument("--y", required=True, help="Outcome column")
    parser.add_argument("--q00", type=float)
    parser.add_argument("--q01", type=float)
    parser.add_argument("--q10", type=float)
    parser.add_argument("--prior-odds-alpha", type=float,
                        help="Prior odds of alpha != 0; with --prior-odds-beta replaces the q flags")
    parser.add_argument("--prior-odds-beta", type=float)
    _add_fit_options(parser)


def _mediation_data(args: argparse.Namespace) -> MediationData:
    frame = load_csv(args.csv)
    return MediationData(
        numeric_column(frame, args.x), numeric_column(frame, args.m), numeric_column(frame, args.y))


def _partition(args: argparse.Namespace, settings: Settings) -> NullPartition:
    odds_alpha: float | None = getattr(args, "prior_odds_alpha", None)
    odds_beta: float | None = getattr(args, "prior_odds_beta", None)
    if odds_alpha is not None or odds_beta is not None:
        if odds_alpha is None or odds_beta is None:
            raise DataParseError("--prior-odds-alpha and --prior-odds-beta must be given together")
        return partition_from_odds(odds_alpha, odds_beta)
    return NullPartition(settings.q00, settings.q01, settings.q10)


def _mediation_report(result: MediationResult, data: MediationData, family: ErrorFamily,
                      priors: PriorConfig) -> dict[str, Any]:
    mediator = mediator_problem(data, family, priors)
    outcome = outcome_problem(data, family, priors)
    return {
        "family": result.family,
        "n": data.n,
        "summaries": result.summaries,
        "bf_alpha": result.bf_alpha,
        "bf_beta": result.bf_beta,
        "bf_med": result.bf_med,
        "partition": result.partition,
        "evidence": {key: value.to_dict() for key, value in result.evidence.items()},
        "diagnostics": {key: _diagnostics_report(value) for key, value in result.diagnostics.items()},
        "equations": {
            "mediator": {
                "label": MEDIATOR_LABEL,
                "sigma_moment_bound": sigma_moment_bound(mediator.n, mediator.k),
                "residual_shape": _shape_report(mediator.design, mediator.response),
            },
            "outcome": {
                "label": OUTCOME_LABEL,
                "sigma_moment_bound": sigma_moment_bound(outcome.n, outcome.k),
                "residual_shape": _shape_report(outcome.design, outcome.response),
            },
        },
        "hpd": result.hpd,
    }


@register_command("mediate", "Bayesian mediation analysis with Bayes factors", _configure_mediate)
def cmd_mediate(args: argparse.Namespace) -> int:
    settings: Settings = resolve_settings(args)
    data: MediationData = _mediation_data(args)
    partition: NullPartition = _partition(args, settings)
    priors: PriorConfig = prior_config(settings)
    result = fit_mediation(
        data,
        args.family,
        chain_config(settings, settings.fit_chains),
        priors,
        partition,
        with_bayes_factors=True,
        report_hpd=settings.report_hpd,
        workers=min(settings.threads or os.cpu_count() or 1, 2),
    )
    report: dict[str, Any] = report_envelope("mediate", settings.model_dump(), settings.seed)
    report.update(_mediation_report(result, data, args.family, priors))
    write_json_report(args.output, report)
    return 0


# --- compare ---

def _configure_compare(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("csv", help="CSV file with a header row")
    parser.add_argument("--response", help="Single-equation mode: response column")
    parser.add_argument("--predictors", nargs="+", default=[])
    parser.add_argument("--x", help="Mediation mode: independent variable column")
    parser.add_argument("--m", help="Mediation mode: mediator column")
    parser.add_argument("--y", help="Mediation mode: outcome column")
    parser.add_argument("--families", nargs="+", type=ErrorFamily, default=list(ErrorFamily),
                        metavar="FAMILY")
    parser.add_argument("--csv-output", help="Flat CSV mirror of the log Bayes factor matrices")
    _add_fit_options(parser)


def _compare_equation(problem: RegressionProblem, families: list[ErrorFamily], settings: Settings,
                      stream_id: int) -> dict[str, Any]:
    validate(problem)
    with _progress_bar(Event.CHAIN_FINISHED, len(families) * settings.fit_chains, "chain"):
        evidences, matrix = compare_families(
            problem, families, chain_config(settings, settings.fit_chains), stream_id)
    equation: dict[str, Any] = {
        "families": [family.label for family in families],
        "log_marginal_likelihood": {f.label: evidences[f].to_dict() for f in families},
        "log_bayes_factor": {row.label: {col.label: matrix[row][col] for col in families} for row in families},
        "residual_shape": _shape_report(problem.design, problem.response),
    }
    if ErrorFamily.NORMAL in families:
        equation["normal_flat_log_evidence"] = normal_flat_log_evidence(problem.design, problem.response)
    return equation


@register_command("compare", "Compare the Full, gamma-Only, nu-Only and Normal families", _configure_compare)
def cmd_compare(args: argparse.Namespace) -> int:
    settings: Settings = resolve_settings(args)
    priors: PriorConfig = prior_config(settings)
    families: list[ErrorFamily] = list(dict.fromkeys(args.families))
    equations: dict[str, dict[str, Any]] = {}
    if args.response:
        frame = load_csv(args.csv)
        design, names = build_design(frame, args.predictors, settings.add_intercept)
        problem = RegressionProblem(design, numeric_column(frame, args.response), ErrorFamily.FULL, priors, names)
        equations[f"{args.response} ~ {' + '.join(names)}"] = _compare_equation(problem, families, settings, 0)
    elif args.x and args.m and args.y:
        data: MediationData = _mediation_data(args)
        for stream_id, (label, problem) in enumerate([
            (MEDIATOR_LABEL, mediator_problem(data, ErrorFamily.FULL, priors)),
            (OUTCOME_LABEL, outcome_problem(data, ErrorFamily.FULL, priors)),
        ]):
            try:
                equations[label] = _compare_equation(problem, families, settings, stream_id)
            except CtptmedError as e:
                raise relabel(e, label) from e
    else:
        raise DataParseError("compare needs either --response or all of --x, --m and --y")

    report: dict[str, Any] = report_envelope("compare", settings.model_dump(), settings.seed)
    report["equations"] = equations
    write_json_report(args.output, report)
    if args.csv_output:
        rows: list[dict[str, Any]] = [
            {"equation": label, "family": row, **values}
            for label, equation in equations.items()
            for row, values in equation["log_bayes_factor"].items()
        ]
        write_csv(args.csv_output, rows)
    return 0


# --- simulate ---

def _configure_simulate(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("scenario", help="Scenario JSON file")
    parser.add_argument("--mode", choices=["recovery", "power"], default="recovery")
    parser.add_argument("--replications", type=int)
    parser.add_argument("--families", nargs="+", type=ErrorFamily, metavar="FAMILY",
                        help="Families to fit (default: the scenario's list)")
    parser.add_argument("--cutoff", type=float, help="Bayes factor cutoff for power runs")
    parser.add_argument("--match-fpr", nargs="+", type=float, default=None,
                        help="Also report TPR at cutoffs matched to these null FPRs")
    parser.add_argument("--bootstrap", action="store_true", help="Run the OLS bootstrap baseline")
    parser.add_argument("--resamples", type=int)
    parser.add_argument("--level", type=float)
    parser.add_argument("--sim-chains", type=int)
    parser.add_argument("--output-dir")
    _add_run_options(parser)


def _table_row(result: ExperimentResult) -> dict[str, Any]:
    row: dict[str, Any] = {
        "scenario": result.scenario,
        "family": result.family.label,
        "mode": result.mode,
        "replications": result.replications,
        "failures": result.failures,
    }
    if result.mode == "recovery":
        row["coverage"] = result.coverage
        for key, (mean, sd) in result.aggregates.get("ab", {}).items():
            row[f"ab_{key}_mean"] = mean
            row[f"ab_{key}_sd"] = sd
    else:
        row.update(cutoff=result.cutoff, tpr=result.tpr, fpr=result.fpr)
        for label, matched in result.matched.items():
            for key, value in matched.items():
                row[f"{label}_{key}"] = value
        rates: dict[str, float] = result.metadata.get("bootstrap_rates", {})
        if rates:
            row.update(bootstrap_tpr=rates["tpr"], bootstrap_fpr=rates["fpr"])
    return row


@register_command("simulate", "Run a parameter-recovery or power study", _configure_simulate)
def cmd_simulate(args: argparse.Namespace) -> int:
    settings: Settings = resolve_settings(args)
    scenario = load_scenario(args.scenario)
    updates: dict[str, Any] = {}
    if args.bootstrap:
        updates["bootstrap"] = scenario.bootstrap.model_copy(update={
            "enabled": True,
            "resamples": settings.bootstrap_resamples,
            "level": settings.bootstrap_level,
        })
    if updates:
        scenario = scenario.model_copy(update=updates)

    replications: int = args.replications or scenario.replications or settings.replications
    families: list[ErrorFamily] = args.families or scenario.families
    study = StudyConfig(
        chain=chain_config(settings, settings.simulation_chains),
        priors=prior_config(settings),
        partition=NullPartition(settings.q00, settings.q01, settings.q10),
        threads=settings.threads,
    )
    if args.mode == "recovery" and scenario.is_null():
        raise ScenarioError(f"Scenario '{scenario.name}' has no mediation effect; use --mode power")

    per_family: int = replications if args.mode == "recovery" else 2 * replications
    results: list[ExperimentResult] = []
    with _progress_bar(Event.REPLICATION_FINISHED, per_family * len(families), "rep"):
        for family in families:
            if args.mode == "recovery":
                results.append(run_recovery(scenario, replications, family, study))
            else:
                cutoff: float = args.cutoff or scenario.cutoff or settings.bayes_factor_cutoff
                targets: list[float] = args.match_fpr if args.match_fpr is not None else scenario.match_fpr
                results.append(run_power(scenario, None, replications, family, cutoff, study, targets))

    stem: str = os.path.join(settings.output_dir, f"{scenario.name}_{args.mode}")
    report: dict[str, Any] = report_envelope("simulate", settings.model_dump(), settings.seed)
    report.update(scenario=scenario, mode=args.mode, results=results)
    write_json_report(args.output or f"{stem}.json", report)
    write_csv(f"{stem}.csv", [_table_row(result) for result in results])
    write_csv(f"{stem}_replications.csv", [
        {"family": result.family.label, **record} for result in results for record in result.records])
    return 0


# --- dist ---

def _configure_dist(parser: argparse.ArgumentParser) -> None:
    sub = parser.add_subparsers(dest="dist_command", required=True)
    for name, help_text in (("pdf", "Density at each X"), ("cdf", "Distribution function at each X"),
                            ("quantile", "Quantile at each probability")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("values", nargs="+", type=float)
        _add_spec_options(p)
    p = sub.add_parser("sample", help="Random draws, one per line")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int)
    _add_spec_options(p)
    p = sub.add_parser("skewcurve", help="CSV rows (gamma, Fisher skewness, Arnold-Groeneveld skewness)")
    p.add_argument("--nu", default="inf")
    p.add_argument("--gamma-min", type=float, default=0.2)
    p.add_argument("--gamma-max", type=float, default=5.0)
    p.add_argument("--points", type=int, default=49)
    p = sub.add_parser("prior", help="CSV rows of the gamma or nu prior density on a grid")
    p.add_argument("parameter", choices=["gamma", "nu"])
    p.add_argument("--lower", type=float)
    p.add_argument("--upper", type=float)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--config", help="JSON file with settings; flags override it")
    p.add_argument("--gamma-shape", type=float)
    p.add_argument("--gamma-rate", type=float)
    p.add_argument("--gamma-lower", type=float)
    p.add_argument("--gamma-upper", type=float)
    p.add_argument("--nu-rate", type=float)


def _add_spec_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gamma", type=float, default=1.0)
    parser.add_argument("--nu", default="inf", help="Degrees of freedom (> 2) or 'inf'")


def _dist_spec(args: argparse.Namespace) -> CtptSpec:
    return CtptSpec(args.gamma, parse_tail(args.nu))


def _print_values(values: Any) -> None:
    for value in np.atleast_1d(values):
        print(f"{value:.10f}")


def _skewcurve(args: argparse.Namespace) -> None:
    tail = parse_tail(args.nu)
    print("gamma,sk_fisher,sk_ag")
    for gamma in np.geomspace(args.gamma_min, args.gamma_max, args.points):
        try:
            fisher: str = f"{ctpt.skewness_fisher(CtptSpec(float(gamma), tail)):.10f}"
        except MomentUndefinedError:
            fisher = ""
        print(f"{gamma:.10f},{fisher},{ctpt.skewness_ag(float(gamma)):.10f}")


def _prior_curve(args: argparse.Namespace) -> None:
    priors: PriorConfig = prior_config(resolve_settings(args))
    if args.parameter == "gamma":
        lower: float = args.lower if args.lower is not None else priors.gamma_support[0]
        upper: float = args.upper if args.upper is not None else min(priors.gamma_support[1], 5.0)
        log_density = prior_logpdf_gamma
    else:
        lower = args.lower if args.lower is not None else 2.0
        upper = args.upper if args.upper is not None else 200.0
        log_density = prior_logpdf_nu
    grid = np.linspace(lower, upper, args.points)
    values = np.asarray(log_density(grid, priors))
    print("value,log_density,density")
    for x, lp in zip(grid, values):
        density: float = math.exp(lp) if math.isfinite(lp) else 0.0
        print(f"{x:.10f},{lp:.10f},{density:.10f}")


@register_command("dist", "Evaluate or sample the CTPT distribution", _configure_dist)
def cmd_dist(args: argparse.Namespace) -> int:
    match args.dist_command:
        case "pdf":
            _print_values(ctpt.pdf(np.array(args.values), _dist_spec(args)))
        case "cdf":
            _print_values(ctpt.cdf(np.array(args.values), _dist_spec(args)))
        case "quantile":
            _print_values(ctpt.quantile(np.array(args.values), _dist_spec(args)))
        case "sample":
            seed: int = resolve_settings(args).seed
            _print_values(ctpt.sample(args.n, _dist_spec(args), SeededRng(seed)))
        case "skewcurve":
            _skewcurve(args)
        case "prior":
            _prior_curve(args)
    return 0
