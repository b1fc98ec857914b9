"""
Marginal likelihoods by iterative bridge sampling, and Bayes factors between
nested regression models.

The proposal is a multivariate normal moment-matched to the first half of every
chain (unconstrained scale); the second half and an equal number of proposal
draws feed the fixed-point iteration of the optimal bridge function. The
relative mean-squared error follows the usual two-term approximation, with the
posterior term inflated by the integrated autocorrelation time.

All nested models share the improper p(beta, sigma) ∝ 1/sigma with the same
(unit) constant, so the constant cancels in every Bayes factor.
"""

import logging
import math
from collections.abc import Callable

import numpy as np
from numpy.typing import ArrayLike
from scipy import special, stats

from datatypes import ChainConfig, Draws, ErrorFamily, EvidenceResult, RegressionProblem
from errors import DegenerateCovarianceError, NonFiniteLogPostError, NotConvergedError
from mcmc import effective_sample_size, sample_posterior
from regression import LogPosterior, least_squares, validate
from special_math import SeededRng

logger: logging.Logger = logging.getLogger(__name__)

BRIDGE_TOLERANCE: float = 1e-10
BRIDGE_MAX_ITERATIONS: int = 1000

# child index of the proposal stream, kept clear of the chain indices
_PROPOSAL_STREAM: int = 1_000_000


def _evaluate(logpost: Callable[[np.ndarray], float], rows: np.ndarray) -> np.ndarray:
    return np.array([logpost(row) for row in rows], dtype=float)


def log_marginal(
    draws: Draws,
    logpost_fn: Callable[[np.ndarray], float],
    strict: bool = False,
) -> EvidenceResult:
    """
    Estimates the log marginal likelihood of the model whose unnormalized
    log posterior (unconstrained scale, Jacobian included) is `logpost_fn`.

    Raises:
        DegenerateCovarianceError: if the proposal covariance is not positive definite.
        NonFiniteLogPostError: if no posterior draw has a finite log posterior.
        NotConvergedError: only with `strict`, when the iteration limit is reached.
    """
    chains = draws.chains(unconstrained=True)
    n_chains, per_chain, dim = chains.shape
    half: int = per_chain // 2
    fit_rows = chains[:, :half, :].reshape(-1, dim)
    eval_chains = chains[:, half:, :]
    eval_rows = eval_chains.reshape(-1, dim)

    mean = fit_rows.mean(axis=0)
    cov = np.atleast_2d(np.cov(fit_rows, rowvar=False))
    # scipy rejects near-singular covariances that cholesky still accepts
    try:
        np.linalg.cholesky(cov)
        proposal = stats.multivariate_normal(mean=mean, cov=cov)
    except (np.linalg.LinAlgError, ValueError):
        raise DegenerateCovarianceError(
            f"Proposal covariance of {', '.join(draws.names)} is not positive definite")
    rng = SeededRng(draws.seed, draws.stream_id, (*draws.substream, _PROPOSAL_STREAM))
    n1: int = eval_rows.shape[0]
    n2: int = n1
    generated = np.asarray(proposal.rvs(size=n2, random_state=rng.generator)).reshape(n2, dim)

    q11 = _evaluate(logpost_fn, eval_rows)
    q12 = np.atleast_1d(proposal.logpdf(eval_rows))
    q21 = _evaluate(logpost_fn, generated)
    q22 = np.atleast_1d(proposal.logpdf(generated))
    l1 = q11 - q12
    l2 = q21 - q22
    if not np.any(np.isfinite(l1)):
        raise NonFiniteLogPostError("Log posterior is not finite at any posterior draw")

    lstar: float = float(np.median(l1[np.isfinite(l1)]))
    log_s1: float = math.log(n1 / (n1 + n2))
    log_s2: float = math.log(n2 / (n1 + n2))
    log_ratio_n: float = math.log(n1 / n2)

    logr: float = 0.0
    converged: bool = False
    iterations: int = 0
    for iterations in range(1, BRIDGE_MAX_ITERATIONS + 1):
        numerator = (l2 - lstar) - np.logaddexp(log_s1 + l2 - lstar, log_s2 + logr)
        denominator = -np.logaddexp(log_s1 + l1 - lstar, log_s2 + logr)
        logr_new: float = log_ratio_n + float(special.logsumexp(numerator)) - \
            float(special.logsumexp(denominator))
        change: float = abs(1.0 - math.exp(logr - logr_new))
        logr = logr_new
        if change < BRIDGE_TOLERANCE:
            converged = True
            break

    log_ml: float = logr + lstar
    if not converged:
        message = f"Bridge sampling did not converge in {BRIDGE_MAX_ITERATIONS} iterations"
        if strict:
            raise NotConvergedError(message)
        logger.warning(f"{message}; returning the last estimate {log_ml:.4f}")

    with np.errstate(over="ignore", under="ignore"):
        # f1 on proposal draws, f2 on posterior draws, both normalised by the estimate
        f1 = np.exp(-np.logaddexp(log_s1, log_s2 + q22 - q21 + log_ml))
        f2 = np.exp(-np.logaddexp(log_s1 + q11 - log_ml - q12, log_s2))
    term1: float = float(np.var(f1, ddof=1) / np.mean(f1) ** 2 / n2) if np.mean(f1) > 0 else math.inf
    if np.mean(f2) > 0 and np.var(f2) > 0:
        f2_chains = f2.reshape(n_chains, eval_chains.shape[1])
        tau: float = n1 / effective_sample_size(f2_chains)
        term2: float = tau * float(np.var(f2, ddof=1) / np.mean(f2) ** 2) / n1
    else:
        term2 = 0.0
    error: float = math.sqrt(term1 + term2)

    logger.debug(
        f"Bridge sampling for ({', '.join(draws.names)}): log ML {log_ml:.4f}, "
        f"relative error {error:.4f}, {iterations} iterations")
    return EvidenceResult(
        log_marginal_likelihood=log_ml,
        approx_standard_error=error,
        iterations_used=iterations,
        converged=converged,
    )


def normal_flat_log_evidence(design: ArrayLike, response: ArrayLike) -> float:
    """
    Closed-form log marginal likelihood of the Normal-error regression under
    p(beta, sigma) ∝ 1/sigma.
    """
    x = np.asarray(design, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, k = x.shape
    dof: float = n - k
    rss: float = least_squares(x, np.asarray(response, dtype=float)).rss
    _, log_det = np.linalg.slogdet(x.T @ x)
    return (
        -0.5 * dof * math.log(2.0 * math.pi)
        - 0.5 * float(log_det)
        + math.log(0.5)
        + float(special.gammaln(0.5 * dof))
        - 0.5 * dof * math.log(0.5 * rss)
    )


def fit_evidence(
    problem: RegressionProblem,
    config: ChainConfig,
    stream_id: int = 0,
    substream: tuple[int, ...] = (),
) -> tuple[Draws, EvidenceResult]:
    """Samples a problem's posterior and estimates its log marginal likelihood from the draws."""
    validate(problem)
    draws: Draws = sample_posterior(problem, config, stream_id, substream)
    return draws, log_marginal(draws, LogPosterior(problem))


def bayes_factor(numerator: EvidenceResult, denominator: EvidenceResult) -> float:
    """exp of the log-evidence difference; clamped to the smallest positive float from below."""
    log_bf: float = numerator.log_marginal_likelihood - denominator.log_marginal_likelihood
    try:
        return max(math.exp(log_bf), float(np.finfo(float).tiny))
    except OverflowError:
        return math.inf


def compare_nested(
    problem: RegressionProblem,
    predictor_index: int,
    config: ChainConfig,
    stream_id: int = 0,
    substream: tuple[int, ...] = (),
) -> tuple[EvidenceResult, EvidenceResult]:
    """
    Evidence of the model with and without the design column `predictor_index`.
    Both models share the error family, priors and improper-prior constant.
    """
    reduced: RegressionProblem = problem.without_column(predictor_index)
    validate(problem)
    validate(reduced)
    _, with_predictor = fit_evidence(problem, config, stream_id, (*substream, 0))
    _, without_predictor = fit_evidence(reduced, config, stream_id, (*substream, 1))
    return with_predictor, without_predictor


def bayes_factor_path(
    problem: RegressionProblem,
    predictor_index: int,
    config: ChainConfig,
    stream_id: int = 0,
    substream: tuple[int, ...] = (),
) -> float:
    """Bayes factor for the presence of the predictor in column `predictor_index`."""
    with_predictor, without_predictor = compare_nested(
        problem, predictor_index, config, stream_id, substream)
    return bayes_factor(with_predictor, without_predictor)


def compare_families(
    problem: RegressionProblem,
    families: list[ErrorFamily],
    config: ChainConfig,
    stream_id: int = 0,
) -> tuple[dict[ErrorFamily, EvidenceResult], dict[ErrorFamily, dict[ErrorFamily, float]]]:
    """
    Fits every family to the same data and returns the evidences together with
    the matrix of log Bayes factors, entry [row][col] = log Z(row) - log Z(col).
    """
    evidences: dict[ErrorFamily, EvidenceResult] = {}
    for index, family in enumerate(families):
        _, evidences[family] = fit_evidence(problem.with_family(family), config, stream_id, (index,))
        logger.info(
            f"{family.label}: log marginal likelihood "
            f"{evidences[family].log_marginal_likelihood:.3f}")
    matrix: dict[ErrorFamily, dict[ErrorFamily, float]] = {
        row: {
            col: evidences[row].log_marginal_likelihood - evidences[col].log_marginal_likelihood
            for col in families
        }
        for row in families
    }
    return evidences, matrix
