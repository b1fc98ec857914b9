"""
The two-equation mediation model

    M = b0_M + alpha * X + sigma_M * eps_M
    Y = b0_Y + beta * M + tau * X + sigma_Y * eps_Y

fitted as two independent CTPT regressions. Posterior draws of alpha and beta
are paired index-wise to give draws of the mediation effect alpha * beta, and
the path Bayes factors combine into the mediation Bayes factor under a prior
split of the null hypothesis.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats

from datatypes import (
    ChainConfig,
    Diagnostics,
    Draws,
    ErrorFamily,
    EvidenceResult,
    MediationData,
    MediationResult,
    NullPartition,
    PriorConfig,
    RegressionProblem,
    SummaryRow,
)
from errors import CtptmedError, DomainError, InsufficientDrawsError, relabel
from evidence import bayes_factor, fit_evidence
from mcmc import diagnose, sample_posterior
from regression import validate

logger: logging.Logger = logging.getLogger(__name__)

MEDIATOR_LABEL: str = "mediator equation M ~ 1 + X"
OUTCOME_LABEL: str = "outcome equation Y ~ 1 + M + X"

MIN_SUMMARY_DRAWS: int = 100
KDE_GRID_POINTS: int = 512
# the KDE grid spans these percentiles so heavy tails do not coarsen it
_KDE_GRID_PERCENTILES: tuple[float, float] = (0.05, 99.95)


def mediator_problem(data: MediationData, family: ErrorFamily, priors: PriorConfig) -> RegressionProblem:
    design = np.column_stack([np.ones(data.n), data.x])
    return RegressionProblem(design, data.m, family, priors, ("intercept", "x"))


def outcome_problem(data: MediationData, family: ErrorFamily, priors: PriorConfig) -> RegressionProblem:
    design = np.column_stack([np.ones(data.n), data.m, data.x])
    return RegressionProblem(design, data.y, family, priors, ("intercept", "m", "x"))


# --- posterior summaries ---

def _silverman_bandwidth(x: np.ndarray) -> float:
    std: float = float(np.std(x))
    q75, q25 = np.percentile(x, [75, 25])
    spread: float = min(std, float(q75 - q25) / 1.34) or std
    return 0.9 * spread * len(x) ** -0.2


def kde_mode(draws: ArrayLike) -> float:
    """Argmax of a Gaussian KDE (Silverman bandwidth) over a 512-point grid."""
    x = np.asarray(draws, dtype=float)
    bandwidth: float = _silverman_bandwidth(x)
    if not bandwidth > 0:
        return float(x[0])
    kde = stats.gaussian_kde(x, bw_method=bandwidth / float(np.std(x, ddof=1)))
    lower, upper = np.percentile(x, _KDE_GRID_PERCENTILES)
    grid = np.linspace(lower, upper, KDE_GRID_POINTS)
    return float(grid[np.argmax(kde(grid))])


def summarize(draws: ArrayLike) -> SummaryRow:
    """
    Mean, KDE mode, the 2.5/25/50/75/97.5 percentiles (linear interpolation) and
    the length of the equal-tailed 95% interval.

    Raises:
        InsufficientDrawsError: if fewer than 100 draws are given.
    """
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < MIN_SUMMARY_DRAWS:
        raise InsufficientDrawsError(
            f"Summaries need at least {MIN_SUMMARY_DRAWS} draws, got {x.size}")
    if np.all(x == x[0]):
        c = float(x[0])
        return SummaryRow(c, c, c, c, c, c, c, 0.0)
    p2_5, p25, p50, p75, p97_5 = (float(v) for v in np.percentile(x, [2.5, 25, 50, 75, 97.5]))
    return SummaryRow(
        mean=float(np.mean(x)),
        mode=kde_mode(x),
        p2_5=p2_5,
        p25=p25,
        p50=p50,
        p75=p75,
        p97_5=p97_5,
        ci_length=p97_5 - p2_5,
    )


def hpd_interval(draws: ArrayLike, prob: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing a `prob` share of the draws."""
    if not 0 < prob < 1:
        raise DomainError(f"HPD probability must lie in (0, 1), got {prob}")
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n: int = x.size
    width: int = int(math.floor(prob * n))
    if width < 1 or width >= n:
        raise InsufficientDrawsError(f"Too few draws ({n}) for a {prob:.0%} HPD interval")
    spans = x[width:] - x[: n - width]
    start: int = int(np.argmin(spans))
    return float(x[start]), float(x[start + width])


# --- Bayes factor algebra ---

def bf_mediation(bf_alpha: float, bf_beta: float, q: NullPartition) -> float:
    """BF_alpha * BF_beta / (q00 + q01 * BF_beta + q10 * BF_alpha), stable for infinite inputs."""
    if not (bf_alpha > 0 and bf_beta > 0):
        raise DomainError(f"Path Bayes factors must be positive, got {bf_alpha}, {bf_beta}")
    denominator: float = q.q00 / (bf_alpha * bf_beta) + q.q01 / bf_alpha + q.q10 / bf_beta
    return math.inf if denominator == 0 else 1.0 / denominator


def bf_mediation_from_odds(
    bf_alpha: float,
    bf_beta: float,
    prior_odds_alpha: float,
    prior_odds_beta: float,
) -> float:
    """(1 + PO_beta + PO_alpha) BF_alpha BF_beta / (1 + PO_beta BF_beta + PO_alpha BF_alpha)."""
    if min(bf_alpha, bf_beta, prior_odds_alpha, prior_odds_beta) <= 0:
        raise DomainError("Bayes factors and prior odds must be positive")
    denominator: float = 1.0 / (bf_alpha * bf_beta) + prior_odds_beta / bf_alpha + prior_odds_alpha / bf_beta
    return (1.0 + prior_odds_beta + prior_odds_alpha) / denominator


def partition_from_odds(prior_odds_alpha: float, prior_odds_beta: float) -> NullPartition:
    """Null split implied by independent path prior odds; equal odds give equal thirds."""
    if not (prior_odds_alpha > 0 and prior_odds_beta > 0):
        raise DomainError("Prior odds must be positive")
    return NullPartition.normalized(1.0, prior_odds_beta, prior_odds_alpha)


# --- fitting ---

def _fit_equation(
    problem: RegressionProblem,
    predictor: str,
    label: str,
    config: ChainConfig,
    with_bayes_factors: bool,
    stream_id: int,
    substream: tuple[int, ...],
) -> tuple[Draws, dict[str, EvidenceResult], float | None]:
    try:
        validate(problem)
        if not with_bayes_factors:
            return sample_posterior(problem, config, stream_id, (*substream, 0)), {}, None
        reduced = problem.without_column(problem.column_names.index(predictor))
        validate(reduced)
        draws, full_evidence = fit_evidence(problem, config, stream_id, (*substream, 0))
        _, reduced_evidence = fit_evidence(reduced, config, stream_id, (*substream, 1))
    except CtptmedError as e:
        raise relabel(e, label) from e
    return draws, {"full": full_evidence, f"without_{predictor}": reduced_evidence}, \
        bayes_factor(full_evidence, reduced_evidence)


def fit_mediation(
    data: MediationData,
    family: ErrorFamily,
    config: ChainConfig,
    priors: PriorConfig | None = None,
    partition: NullPartition | None = None,
    with_bayes_factors: bool = True,
    report_hpd: bool = False,
    stream_id: int = 0,
    substream: tuple[int, ...] = (),
    workers: int = 1,
) -> MediationResult:
    """
    Fits M ~ 1 + X and Y ~ 1 + M + X independently under `family` and assembles
    posterior summaries and, with `with_bayes_factors`, the path and mediation
    Bayes factors.

    With `workers` above one the two sub-models run in separate processes; the
    draws do not depend on it. Errors from either sub-model are re-raised with
    the equation's label.
    """
    priors = priors or PriorConfig()
    partition = partition or NullPartition()

    jobs = [
        (mediator_problem(data, family, priors), "x", MEDIATOR_LABEL,
         config, with_bayes_factors, stream_id, (*substream, 0)),
        (outcome_problem(data, family, priors), "m", OUTCOME_LABEL,
         config, with_bayes_factors, stream_id, (*substream, 1)),
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=2) as executor:
            futures = [executor.submit(_fit_equation, *job) for job in jobs]
            (m_draws, m_evidence, bf_alpha), (y_draws, y_evidence, bf_beta) = (f.result() for f in futures)
    else:
        (m_draws, m_evidence, bf_alpha), (y_draws, y_evidence, bf_beta) = (_fit_equation(*job) for job in jobs)

    alpha = m_draws.column("x")
    beta = y_draws.column("m")
    ab = alpha * beta

    columns: dict[str, np.ndarray] = {
        "alpha": alpha,
        "beta": beta,
        "ab": ab,
        "tau": y_draws.column("x"),
        "sigma_m": m_draws.column("sigma"),
        "sigma_y": y_draws.column("sigma"),
    }
    for name in ("gamma", "nu"):
        if name in m_draws.names:
            columns[f"{name}_m"] = m_draws.column(name)
            columns[f"{name}_y"] = y_draws.column(name)
    summaries: dict[str, SummaryRow] = {name: summarize(values) for name, values in columns.items()}

    diagnostics: dict[str, Diagnostics] = {
        "mediator": diagnose(m_draws),
        "outcome": diagnose(y_draws),
    }
    evidence: dict[str, EvidenceResult] = {
        **{f"mediator_{key}": value for key, value in m_evidence.items()},
        **{f"outcome_{key}": value for key, value in y_evidence.items()},
    }
    bf_med: float | None = None
    if bf_alpha is not None and bf_beta is not None:
        bf_med = bf_mediation(bf_alpha, bf_beta, partition)
        logger.info(f"BF_alpha = {bf_alpha:.4g}, BF_beta = {bf_beta:.4g}, BF_med = {bf_med:.4g}")

    hpd: dict[str, tuple[float, float]] = {}
    if report_hpd:
        hpd = {name: hpd_interval(columns[name]) for name in ("alpha", "beta", "ab")}

    return MediationResult(
        family=family,
        alpha_draws=alpha,
        beta_draws=beta,
        ab_draws=ab,
        summaries=summaries,
        diagnostics=diagnostics,
        partition=partition,
        evidence=evidence,
        bf_alpha=bf_alpha,
        bf_beta=bf_beta,
        bf_med=bf_med,
        hpd=hpd,
    )
