"""
Simulation studies: data generators, parameter-recovery and power experiments,
cutoff matching and the OLS case-bootstrap baseline.

Replication r of an experiment draws everything from stream id r (alternative
data under sub-stream 0, null data under sub-stream 1), so results do not
depend on execution order or the number of worker processes.
"""

import logging
import math
import os
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, fields
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

import ctpt
from datatypes import (
    BootstrapResult,
    CtptErr,
    ErrorFamily,
    ErrorSpec,
    Event,
    ExperimentResult,
    MediationData,
    MediationResult,
    NormalErr,
    NullVariant,
    ScenarioConfig,
    StudyConfig,
    SummaryRow,
    TukeyGH,
)
from errors import CtptmedError, DomainError, InsufficientNullRunsError, ScenarioError
from events import fire_event
from mcmc import SAMPLER_NAME
from mediation import fit_mediation
from special_math import SeededRng, draw_standard_normal

logger: logging.Logger = logging.getLogger(__name__)

NULL_CYCLE: tuple[NullVariant, ...] = (
    NullVariant.BOTH_ZERO, NullVariant.ALPHA_ZERO, NullVariant.BETA_ZERO)

ALT_ARM: int = 0
NULL_ARM: int = 1

SUMMARY_FIELDS: tuple[str, ...] = tuple(f.name for f in fields(SummaryRow))


# --- generators ---

def tukey_gh_mean(g: float, h: float) -> float:
    """Theoretical mean of the Tukey g-and-h variable; zero in the g = 0 limit."""
    if not 0 <= h < 1:
        raise DomainError(f"Tukey h must lie in [0, 1), got {h}")
    if g == 0:
        return 0.0
    return math.expm1(g * g / (2.0 * (1.0 - h))) / (g * math.sqrt(1.0 - h))


def sample_tukey_gh(n: int, g: float, h: float, rng: SeededRng) -> np.ndarray:
    """Centred Tukey g-and-h draws: ((e^{gZ} - 1) / g) e^{hZ^2/2} minus the theoretical mean."""
    mean: float = tukey_gh_mean(g, h)
    z = np.asarray(draw_standard_normal(rng, n))
    tail = np.exp(0.5 * h * z * z)
    if g == 0:
        return z * tail
    return np.expm1(g * z) / g * tail - mean


def sample_error(spec: ErrorSpec, n: int, rng: SeededRng) -> np.ndarray:
    match spec:
        case CtptErr():
            return ctpt.sample(n, spec.ctpt_spec(), rng)
        case TukeyGH(g=g, h=h):
            return sample_tukey_gh(n, g, h, rng)
        case NormalErr():
            return np.asarray(draw_standard_normal(rng, n))
    raise ScenarioError(f"Unknown error specification: {spec!r}")


def gen_data(scenario: ScenarioConfig, rng: SeededRng) -> MediationData:
    """
    X ~ N(0, 1); M = b0_M + alpha X + sigma_M eps_M; Y = b0_Y + beta M + tau X + sigma_Y eps_Y.
    A set `null_variant` zeroes the selected paths first.
    """
    if scenario.null_variant is not None:
        scenario = scenario.with_null(scenario.null_variant)
    n: int = scenario.n
    x = np.asarray(draw_standard_normal(rng.child(0), n))
    eps_m = sample_error(scenario.err_m, n, rng.child(1))
    eps_y = sample_error(scenario.err_y, n, rng.child(2))
    m = scenario.intercepts[0] + scenario.alpha * x + scenario.sigma_m * eps_m
    y = scenario.intercepts[1] + scenario.beta * m + scenario.tau * x + scenario.sigma_y * eps_y
    return MediationData(x, m, y)


def null_scenario(scenario: ScenarioConfig, replication: int) -> ScenarioConfig:
    """
    The null scenario of replication r: a fixed `null_variant` is kept, otherwise
    the variant cycles uniformly over the three null cases.
    """
    if scenario.null_variant is not None:
        return scenario.with_null(scenario.null_variant)
    return scenario.with_null(NULL_CYCLE[replication % len(NULL_CYCLE)])


# --- baseline ---

def check_null_pairing(scenario_alt: ScenarioConfig, scenario_null: ScenarioConfig) -> None:
    """
    Raises ScenarioError unless `scenario_null` equals `scenario_alt` apart from
    zeroed paths (and study-level fields such as the name).
    """
    free = {"name", "alpha", "beta", "null_variant", "families", "replications", "cutoff", "match_fpr"}
    alt, null = scenario_alt.model_dump(exclude=free), scenario_null.model_dump(exclude=free)
    differing = sorted(key for key in alt if alt[key] != null[key])
    if differing:
        raise ScenarioError(
            f"Null scenario '{scenario_null.name}' differs from '{scenario_alt.name}' in {', '.join(differing)}")
    for path in ("alpha", "beta"):
        value = getattr(scenario_null, path)
        if value not in (0.0, getattr(scenario_alt, path)):
            raise ScenarioError(
                f"Null scenario '{scenario_null.name}' must keep or zero {path}, got {value:g}")
    if not scenario_null.is_null():
        raise ScenarioError(f"Null scenario '{scenario_null.name}' has a non-zero mediation effect")


def _ols_indirect(x: np.ndarray, m: np.ndarray, y: np.ndarray) -> float | None:
    ones = np.ones_like(x)
    mediator_design = np.column_stack([ones, x])
    outcome_design = np.column_stack([ones, m, x])
    if np.linalg.matrix_rank(mediator_design) < 2 or np.linalg.matrix_rank(outcome_design) < 3:
        return None
    alpha = np.linalg.lstsq(mediator_design, m, rcond=None)[0][1]
    beta = np.linalg.lstsq(outcome_design, y, rcond=None)[0][1]
    return float(alpha * beta)


def ols_bootstrap_test(data: MediationData, resamples: int, level: float, rng: SeededRng) -> BootstrapResult:
    """
    Case-resampling bootstrap of the OLS indirect effect with a percentile
    interval; rejects when zero lies outside the interval. Resamples with a
    singular design are dropped and counted.
    """
    if resamples < 199:
        raise DomainError(f"The bootstrap needs at least 199 resamples, got {resamples}")
    if not 0 < level < 1:
        raise DomainError(f"Bootstrap level must lie in (0, 1), got {level}")
    estimate = _ols_indirect(data.x, data.m, data.y)
    if estimate is None:
        raise DomainError("OLS fit of the observed data is singular")

    estimates: list[float] = []
    dropped: int = 0
    for _ in range(resamples):
        rows = rng.generator.integers(0, data.n, data.n)
        value = _ols_indirect(data.x[rows], data.m[rows], data.y[rows])
        if value is None:
            dropped += 1
        else:
            estimates.append(value)
    if dropped:
        logger.warning(f"Dropped {dropped} singular bootstrap resamples out of {resamples}")
    lower, upper = np.percentile(estimates, [50.0 * (1.0 - level), 50.0 * (1.0 + level)])
    return BootstrapResult(
        estimate=estimate,
        ci=(float(lower), float(upper)),
        reject=not (lower <= 0.0 <= upper),
        resamples_used=len(estimates),
        resamples_dropped=dropped,
    )


# --- cutoff matching ---

def match_cutoff(null_bfs: ArrayLike, target_fpr: float) -> float:
    """
    The ceil(target * R)-th largest null Bayes factor. Rejecting when BF > cutoff
    then gives an empirical false-positive rate within 1/R of the target.

    Raises:
        InsufficientNullRunsError: if there are fewer than 1/target null values.
    """
    if not 0 < target_fpr < 1:
        raise DomainError(f"Target FPR must lie in (0, 1), got {target_fpr}")
    ordered = np.sort(np.asarray(null_bfs, dtype=float))[::-1]
    total: int = ordered.size
    if target_fpr * total < 1.0 - 1e-9:
        raise InsufficientNullRunsError(
            f"Matching an FPR of {target_fpr:g} needs at least {math.ceil(1 / target_fpr)} "
            f"null replications, got {total}")
    rank: int = math.ceil(target_fpr * total - 1e-9)
    return float(ordered[rank - 1])


def rejection_rate(bfs: ArrayLike, cutoff: float) -> float:
    values = np.asarray(bfs, dtype=float)
    return float(np.mean(values > cutoff)) if values.size else math.nan


# --- replication workers ---

def _summary_columns(result: MediationResult, truths: dict[str, float]) -> dict[str, Any]:
    record: dict[str, Any] = {}
    for name, row in result.summaries.items():
        for key, value in row.to_dict().items():
            record[f"{name}_{key}"] = value
        if name in truths:
            record[f"{name}_covered"] = row.covers(truths[name])
    record["rhat_max"] = max(
        (v for d in result.diagnostics.values() for v in d.rhat.values() if math.isfinite(v)),
        default=math.nan)
    record["stuck"] = any(d.stuck for d in result.diagnostics.values())
    return record


def _truths(scenario: ScenarioConfig) -> dict[str, float]:
    return {"alpha": scenario.alpha, "beta": scenario.beta, "ab": scenario.true_ab, "tau": scenario.tau}


def _recovery_replication(
    scenario: ScenarioConfig,
    family: ErrorFamily,
    study: StudyConfig,
    replication: int,
) -> dict[str, Any]:
    record: dict[str, Any] = {"replication": replication, "ok": True}
    try:
        data = gen_data(scenario, SeededRng(study.seed, replication, (ALT_ARM, 0)))
        result = fit_mediation(
            data, family, study.chain, study.priors, study.partition,
            with_bayes_factors=False, stream_id=replication, substream=(ALT_ARM, 1))
        record.update(_summary_columns(result, _truths(scenario)))
    except CtptmedError as e:
        logger.warning(f"Recovery replication {replication} failed: {e}")
        record.update(ok=False, error=str(e))
    return record


def _power_replication(
    scenario: ScenarioConfig,
    family: ErrorFamily,
    study: StudyConfig,
    replication: int,
    arm: int,
) -> dict[str, Any]:
    if arm == NULL_ARM:
        scenario = null_scenario(scenario, replication)
    record: dict[str, Any] = {
        "replication": replication,
        "arm": "null" if arm == NULL_ARM else "alternative",
        "null_variant": scenario.null_variant.value if scenario.null_variant else None,
        "ok": True,
    }
    try:
        data = gen_data(scenario, SeededRng(study.seed, replication, (arm, 0)))
        result = fit_mediation(
            data, family, study.chain, study.priors, study.partition,
            with_bayes_factors=True, stream_id=replication, substream=(arm, 1))
        record.update(bf_alpha=result.bf_alpha, bf_beta=result.bf_beta, bf_med=result.bf_med)
        record.update(_summary_columns(result, _truths(scenario)))
        if scenario.bootstrap.enabled:
            boot = ols_bootstrap_test(
                data, scenario.bootstrap.resamples, scenario.bootstrap.level,
                SeededRng(study.seed, replication, (arm, 2)))
            record.update(
                bootstrap_estimate=boot.estimate,
                bootstrap_lower=boot.ci[0],
                bootstrap_upper=boot.ci[1],
                bootstrap_reject=boot.reject,
                bootstrap_dropped=boot.resamples_dropped,
            )
    except CtptmedError as e:
        logger.warning(f"Power replication {replication} ({record['arm']}) failed: {e}")
        record.update(ok=False, error=str(e))
    return record


def _run_replications(
    worker: Callable[..., dict[str, Any]],
    jobs: list[tuple[Any, ...]],
    threads: int | None,
    label: str,
) -> list[dict[str, Any]]:
    """Runs `worker(*job)` for every job, in worker processes when more than one is allowed."""
    workers: int = min(threads or os.cpu_count() or 1, len(jobs)) or 1
    records: list[dict[str, Any]] = []
    if workers == 1:
        for done, job in enumerate(jobs, start=1):
            records.append(worker(*job))
            fire_event(Event.REPLICATION_FINISHED, label, done, len(jobs))
        return records
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(worker, *job) for job in jobs]
        for done, future in enumerate(as_completed(futures), start=1):
            records.append(future.result())
            fire_event(Event.REPLICATION_FINISHED, label, done, len(jobs))
    return records


# --- aggregation ---

def _aggregate(frame: pd.DataFrame) -> dict[str, dict[str, tuple[float, float]]]:
    """Mean and SD across replications of every SummaryRow column."""
    aggregates: dict[str, dict[str, tuple[float, float]]] = {}
    ddof: int = 1 if len(frame) > 1 else 0
    for column in frame.columns:
        for key in SUMMARY_FIELDS:
            if column.endswith(f"_{key}"):
                name = column[: -len(key) - 1]
                values = frame[column].astype(float)
                aggregates.setdefault(name, {})[key] = (float(values.mean()), float(values.std(ddof=ddof)))
                break
    return aggregates


def _metadata(scenario: ScenarioConfig, study: StudyConfig) -> dict[str, Any]:
    return {
        "seed": study.seed,
        "sampler": SAMPLER_NAME,
        "chain": asdict(study.chain),
        "priors": asdict(study.priors),
        "partition": asdict(study.partition),
        "x_distribution": "standard normal",
        "null_mixture": "null replication r uses " + "/".join(v.value for v in NULL_CYCLE) + " by r mod 3",
        "bootstrap": scenario.bootstrap.model_dump() | {"resampling": "cases", "interval": "percentile"},
        "streams": "replication r uses stream r; alternative arm sub-stream 0, null arm sub-stream 1",
    }


def run_recovery(
    scenario: ScenarioConfig,
    replications: int,
    family: ErrorFamily,
    study: StudyConfig,
) -> ExperimentResult:
    """
    Repeats gen_data -> fit_mediation and aggregates the posterior summaries of
    alpha, beta, alpha*beta, tau, the scales and the free shape parameters,
    together with the credible-interval coverage of the true values.
    """
    if scenario.is_null():
        raise ScenarioError(
            f"Scenario '{scenario.name}' has a zero mediation effect; recovery coverage is undefined")
    jobs = [(scenario, family, study, r) for r in range(replications)]
    records = sorted(
        _run_replications(_recovery_replication, jobs, study.threads, f"{scenario.name}/{family.value}"),
        key=lambda rec: rec["replication"])
    frame = pd.DataFrame([rec for rec in records if rec["ok"]])
    failures: int = replications - len(frame)

    aggregates: dict[str, dict[str, tuple[float, float]]] = {}
    coverage: float | None = None
    metadata = _metadata(scenario, study)
    if not frame.empty:
        aggregates = _aggregate(frame)
        coverage = float(frame["ab_covered"].mean())
        metadata["coverage_by_parameter"] = {
            name: float(frame[f"{name}_covered"].mean())
            for name in _truths(scenario) if f"{name}_covered" in frame
        }
    if failures:
        logger.warning(f"{failures} of {replications} recovery replications failed")

    result = ExperimentResult(
        mode="recovery",
        scenario=scenario.name,
        family=family,
        replications=replications,
        failures=failures,
        records=records,
        aggregates=aggregates,
        coverage=coverage,
        metadata=metadata,
    )
    fire_event(Event.EXPERIMENT_FINISHED, result)
    return result


def run_power(
    scenario_alt: ScenarioConfig,
    scenario_null: ScenarioConfig | None,
    replications: int,
    family: ErrorFamily,
    cutoff: float,
    study: StudyConfig,
    match_fpr: list[float] | None = None,
) -> ExperimentResult:
    """
    TPR of BF_med > cutoff over alternative replications and FPR over null
    replications whose null variant cycles over the three null cases.

    With `match_fpr`, cutoffs are also matched to each target FPR from the null
    Bayes factors; with the bootstrap baseline enabled, one more cutoff is
    matched to the bootstrap's empirical FPR.
    """
    if scenario_alt.is_null():
        raise ScenarioError(f"Scenario '{scenario_alt.name}' has no mediation effect under the alternative")
    if not cutoff > 0:
        raise DomainError(f"Bayes factor cutoff must be positive, got {cutoff}")
    targets: list[float] = list(match_fpr or [])
    for target in targets:
        if target * replications < 1.0 - 1e-9:
            raise InsufficientNullRunsError(
                f"Matching an FPR of {target:g} needs at least {math.ceil(1 / target)} null replications")
    if scenario_null is not None:
        check_null_pairing(scenario_alt, scenario_null)
    scenario_null = scenario_null or scenario_alt

    label: str = f"{scenario_alt.name}/{family.value}"
    jobs = [(scenario_alt, family, study, r, ALT_ARM) for r in range(replications)] + \
        [(scenario_null, family, study, r, NULL_ARM) for r in range(replications)]
    records = sorted(
        _run_replications(_power_replication, jobs, study.threads, label),
        key=lambda rec: (rec["arm"] == "null", rec["replication"]))
    ok = [rec for rec in records if rec["ok"]]
    alt_bfs = np.array([rec["bf_med"] for rec in ok if rec["arm"] == "alternative"], dtype=float)
    null_bfs = np.array([rec["bf_med"] for rec in ok if rec["arm"] == "null"], dtype=float)
    failures: int = len(records) - len(ok)
    if failures:
        logger.warning(f"{failures} of {len(records)} power replications failed")

    matched: dict[str, dict[str, float]] = {}
    for target in targets:
        try:
            matched_cutoff = match_cutoff(null_bfs, target)
        except InsufficientNullRunsError as e:
            logger.warning(f"Cannot match FPR {target:g}: {e}")
            continue
        matched[f"fpr_{target:g}"] = {
            "target_fpr": target,
            "cutoff": matched_cutoff,
            "tpr": rejection_rate(alt_bfs, matched_cutoff),
            "fpr": rejection_rate(null_bfs, matched_cutoff),
        }

    metadata = _metadata(scenario_alt, study)
    if scenario_alt.bootstrap.enabled:
        boot_alt = [bool(rec["bootstrap_reject"]) for rec in ok if rec["arm"] == "alternative"]
        boot_null = [bool(rec["bootstrap_reject"]) for rec in ok if rec["arm"] == "null"]
        boot_tpr: float = float(np.mean(boot_alt)) if boot_alt else math.nan
        boot_fpr: float = float(np.mean(boot_null)) if boot_null else math.nan
        metadata["bootstrap_rates"] = {"tpr": boot_tpr, "fpr": boot_fpr}
        if 0 < boot_fpr < 1:
            try:
                boot_cutoff = match_cutoff(null_bfs, boot_fpr)
                matched["bootstrap_fpr"] = {
                    "target_fpr": boot_fpr,
                    "cutoff": boot_cutoff,
                    "tpr": rejection_rate(alt_bfs, boot_cutoff),
                    "fpr": rejection_rate(null_bfs, boot_cutoff),
                    "bootstrap_tpr": boot_tpr,
                }
            except InsufficientNullRunsError as e:
                logger.warning(f"Cannot match the bootstrap FPR: {e}")
        else:
            logger.info(f"Bootstrap FPR is {boot_fpr:g}; no cutoff matched to it")

    result = ExperimentResult(
        mode="power",
        scenario=scenario_alt.name,
        family=family,
        replications=len(records),
        failures=failures,
        records=records,
        aggregates=_aggregate(pd.DataFrame([rec for rec in ok if rec["arm"] == "alternative"])),
        tpr=rejection_rate(alt_bfs, cutoff),
        fpr=rejection_rate(null_bfs, cutoff),
        cutoff=cutoff,
        matched=matched,
        metadata=metadata,
    )
    fire_event(Event.EXPERIMENT_FINISHED, result)
    return result
