"""
Adaptive component-wise random-walk Metropolis and convergence diagnostics.

Each iteration updates every coordinate of the unconstrained vector in turn with
a Gaussian proposal. During burn-in the per-coordinate log step sizes follow a
Robbins-Monro recursion towards the target acceptance rate, one update per
`adapt_window` iterations; at the end of burn-in they are frozen, so the kept
draws come from a fixed Metropolis kernel.
"""

import logging
import math
from collections.abc import Callable, Sequence

import numpy as np

from datatypes import ChainConfig, Diagnostics, Draws, Event, OlsFit, ParamVector, RegressionProblem
from errors import InsufficientDrawsError, NonFiniteLogPostError
from events import fire_event
from regression import LogPosterior, ParameterTransform, least_squares, validate
from special_math import SeededRng

logger: logging.Logger = logging.getLogger(__name__)

INITIAL_NU: float = 10.0
RHAT_THRESHOLD: float = 1.01
STUCK_ACCEPTANCE: float = 0.01
SAMPLER_NAME: str = "adaptive component-wise random-walk Metropolis"

_OVERDISPERSION: float = 2.0
_START_ATTEMPTS: int = 20


def initialize(problem: RegressionProblem) -> ParamVector:
    """Least-squares start: beta = OLS solution, sigma = residual SD, gamma = 1, nu = 10."""
    validate(problem)
    fit: OlsFit = least_squares(problem.design, problem.response)
    return ParamVector(
        beta=np.array(fit.coefficients, dtype=float),
        sigma=fit.sigma,
        gamma=1.0,
        nu=INITIAL_NU if problem.family.nu_free else None,
    )


def initial_step_sizes(problem: RegressionProblem) -> np.ndarray:
    """Proposal scales on the unconstrained scale, from the OLS standard errors."""
    fit: OlsFit = least_squares(problem.design, problem.response)
    steps: list[float] = [*np.where(np.isfinite(fit.standard_errors) & (fit.standard_errors > 0),
                                    fit.standard_errors, 0.1)]
    steps.append(1.0 / math.sqrt(2.0 * (problem.n - problem.k)))
    if problem.family.gamma_free:
        steps.append(0.5)
    if problem.family.nu_free:
        steps.append(0.5)
    return np.array(steps)


def _metropolis(
    logpost: Callable[[np.ndarray], float],
    start: np.ndarray,
    step_sizes: np.ndarray,
    config: ChainConfig,
    rng: SeededRng,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Runs one chain; returns (kept draws, post-burn-in acceptance per coordinate, frozen steps)."""
    z = np.array(start, dtype=float)
    dim: int = z.shape[0]
    current: float = logpost(z)
    if not math.isfinite(current):
        raise NonFiniteLogPostError(f"Log posterior is not finite at the starting point {z}")

    log_steps = np.log(step_sizes)
    burn_in: int = config.burn_in
    kept = np.empty((config.kept_per_chain, dim))
    batch_accepts = np.zeros(dim)
    kept_accepts = np.zeros(dim)
    batch: int = 0
    generator = rng.generator

    for it in range(config.total_iterations):
        noise = generator.standard_normal(dim) * np.exp(log_steps)
        log_u = np.log(generator.random(dim))
        for j in range(dim):
            old: float = z[j]
            z[j] = old + noise[j]
            proposed: float = logpost(z)
            if log_u[j] < proposed - current:
                current = proposed
                if it < burn_in:
                    batch_accepts[j] += 1
                else:
                    kept_accepts[j] += 1
            else:
                z[j] = old
        if it < burn_in:
            if (it + 1) % config.adapt_window == 0:
                batch += 1
                rate = batch_accepts / config.adapt_window
                log_steps += (rate - config.target_accept) / math.sqrt(batch)
                batch_accepts[:] = 0
                logger.debug(f"Adaptation batch {batch}: acceptance {np.round(rate, 3)}")
        else:
            kept[it - burn_in] = z

    return kept, kept_accepts / config.kept_per_chain, np.exp(log_steps)


def _dispersed_start(
    logpost: Callable[[np.ndarray], float],
    centre: np.ndarray,
    step_sizes: np.ndarray,
    rng: SeededRng,
) -> np.ndarray:
    for _ in range(_START_ATTEMPTS):
        candidate = centre + _OVERDISPERSION * step_sizes * rng.generator.standard_normal(centre.shape[0])
        if math.isfinite(logpost(candidate)):
            return candidate
    return np.array(centre, dtype=float)


def run_chain(
    logpost: Callable[[np.ndarray], float],
    init: np.ndarray,
    config: ChainConfig,
    step_sizes: np.ndarray | None = None,
    stream_id: int = 0,
    names: Sequence[str] | None = None,
    to_natural: Callable[[np.ndarray], np.ndarray] | None = None,
    substream: tuple[int, ...] = (),
) -> Draws:
    """
    Runs `config.n_chains` chains on an unconstrained log density and stacks the
    post-burn-in draws chain after chain.

    Chain c draws from the stream (config.seed, stream_id, *substream, c). With
    more than one chain, starting points are scattered around `init` by twice the
    step sizes.

    Raises:
        NonFiniteLogPostError: if the log density is not finite at `init`.
    """
    init = np.asarray(init, dtype=float)
    dim: int = init.shape[0]
    steps = np.ones(dim) if step_sizes is None else np.asarray(step_sizes, dtype=float)
    names = list(names) if names is not None else [f"theta{j}" for j in range(dim)]
    if not math.isfinite(logpost(init)):
        raise NonFiniteLogPostError(f"Log posterior is not finite at the initial value {init}")

    base = SeededRng(config.seed, stream_id, substream)
    blocks: list[np.ndarray] = []
    acceptance: list[np.ndarray] = []
    frozen: list[np.ndarray] = []
    stuck: bool = False
    for c in range(config.n_chains):
        rng: SeededRng = base.child(c)
        start = init if config.n_chains == 1 else _dispersed_start(logpost, init, steps, rng)
        kept, accepted, final_steps = _metropolis(logpost, start, steps, config, rng)
        mean_rate = float(np.mean(accepted))
        if mean_rate < STUCK_ACCEPTANCE:
            stuck = True
            logger.warning(
                f"Chain {c} of stream {stream_id} accepted only {mean_rate:.2%} of proposals after burn-in")
        logger.debug(f"Chain {c} of stream {stream_id} finished, acceptance {mean_rate:.3f}")
        fire_event(Event.CHAIN_FINISHED, stream_id, c, mean_rate)
        blocks.append(kept)
        acceptance.append(accepted)
        frozen.append(final_steps)

    unconstrained = np.vstack(blocks)
    natural = to_natural(unconstrained) if to_natural is not None else unconstrained.copy()
    return Draws(
        natural=natural,
        unconstrained=unconstrained,
        names=names,
        n_chains=config.n_chains,
        acceptance=np.mean(acceptance, axis=0),
        step_sizes=np.array(frozen),
        seed=config.seed,
        stream_id=stream_id,
        stuck=stuck,
        substream=substream,
    )


def sample_posterior(
    problem: RegressionProblem,
    config: ChainConfig,
    stream_id: int = 0,
    substream: tuple[int, ...] = (),
) -> Draws:
    """Samples the posterior of a regression problem, starting from the least-squares fit."""
    transform = ParameterTransform(problem)
    init: ParamVector = initialize(problem)
    return run_chain(
        LogPosterior(problem),
        transform.to_unconstrained(init),
        config,
        step_sizes=initial_step_sizes(problem),
        stream_id=stream_id,
        names=transform.names,
        to_natural=transform.to_natural_array,
        substream=substream,
    )


# --- diagnostics ---

def _autocovariance(x: np.ndarray) -> np.ndarray:
    n: int = x.shape[-1]
    centred = x - x.mean(axis=-1, keepdims=True)
    size: int = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centred, n=size, axis=-1)
    return np.fft.irfft(spectrum * np.conj(spectrum), n=size, axis=-1)[..., :n] / n


def effective_sample_size(chains: np.ndarray) -> float:
    """
    Multi-chain effective sample size with Geyer's initial monotone sequence
    estimator. `chains` is (n,) or (n_chains, n); the result never exceeds the
    number of draws.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        raise InsufficientDrawsError(f"ESS needs at least 4 draws per chain, got {n}")
    acov = _autocovariance(x)
    within: float = float(np.mean(acov[:, 0] * n / (n - 1)))
    var_plus: float = within * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    if not var_plus > 0:
        return 1.0
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    negative = np.flatnonzero(pairs < 0)
    if negative.size:
        pairs = pairs[: negative[0]]
    pairs = np.minimum.accumulate(pairs)
    tau: float = -1.0 + 2.0 * float(pairs.sum())
    total: int = m * n
    return float(min(total / max(tau, 1e-12), total))


def split_rhat(chains: np.ndarray) -> float:
    """Split R-hat of (n_chains, n) draws; NaN when the draws have no within-chain variance."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    n: int = x.shape[1]
    half: int = n // 2
    if half < 2:
        raise InsufficientDrawsError(f"Split R-hat needs at least 4 draws per chain, got {n}")
    splits = np.vstack([x[:, :half], x[:, n - half:]])
    within: float = float(np.mean(np.var(splits, axis=1, ddof=1)))
    if not within > 0:
        return math.nan
    between: float = half * float(np.var(splits.mean(axis=1), ddof=1))
    pooled: float = (half - 1) / half * within + between / half
    return math.sqrt(pooled / within)


def diagnose(draws: Draws) -> Diagnostics:
    """Split R-hat and ESS per natural-space parameter; flags R-hat above 1.01 or undefined."""
    chains = draws.chains()
    rhat: dict[str, float] = {}
    ess: dict[str, float] = {}
    flagged: list[str] = []
    for j, name in enumerate(draws.names):
        rhat[name] = split_rhat(chains[:, :, j])
        ess[name] = effective_sample_size(chains[:, :, j])
        if not rhat[name] <= RHAT_THRESHOLD:
            flagged.append(name)
    if flagged:
        logger.warning(f"R-hat above {RHAT_THRESHOLD} or undefined for: {', '.join(flagged)}")
    return Diagnostics(
        rhat=rhat,
        ess=ess,
        acceptance_rate=float(np.mean(draws.acceptance)),
        flagged=flagged,
        stuck=draws.stuck,
    )
