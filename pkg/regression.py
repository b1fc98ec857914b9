"""
Bayesian linear regression with CTPT errors.

    y_i = x_i' beta + sigma * eps_i,   eps_i ~ CTPT(gamma, nu)

The prior is p(beta, sigma) ∝ 1/sigma, times a truncated gamma prior on gamma
and a shifted exponential prior on nu when those parameters are free. The
sampler works on an unconstrained vector laid out as

    [beta_0 .. beta_{k-1}, log sigma, logit-scaled gamma?, log(nu - 2)?]

where the bracketed entries are present only when the family frees them.
"""

import logging
import math

import numpy as np
from numpy.typing import ArrayLike
from scipy import special, stats

import ctpt
from datatypes import (
    CtptSpec,
    ErrorFamily,
    Finite,
    NormalLimit,
    OlsFit,
    ParamVector,
    PriorConfig,
    RegressionProblem,
)
from errors import DegenerateResponseError, GuardViolation, ImproperPosteriorError, RankDeficientError

logger: logging.Logger = logging.getLogger(__name__)

# relative residual norm below which the response counts as lying in the column space
_DEGENERATE_RESIDUAL_TOL: float = 1e-10


# --- least squares helpers ---

def least_squares(design: np.ndarray, response: np.ndarray) -> OlsFit:
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, k = x.shape
    coefficients, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    residuals = y - x @ coefficients
    rss = float(residuals @ residuals)
    sigma: float = math.sqrt(rss / (n - k)) if n > k else math.nan
    try:
        unscaled = np.linalg.inv(x.T @ x)
        standard_errors = sigma * np.sqrt(np.clip(np.diag(unscaled), 0.0, None))
    except np.linalg.LinAlgError:
        standard_errors = np.full(k, math.nan)
    return OlsFit(coefficients, residuals, rss, sigma, standard_errors)


def residual_shape(design: np.ndarray, response: np.ndarray) -> tuple[float, float]:
    """Sample skewness and (non-excess) kurtosis of the least-squares residuals."""
    residuals = least_squares(design, response).residuals
    return (float(stats.skew(residuals)), float(stats.kurtosis(residuals, fisher=False)))


# --- guards ---

def validate(problem: RegressionProblem) -> None:
    """
    Checks the conditions under which the posterior is proper.

    Raises:
        ImproperPosteriorError: if n <= k.
        RankDeficientError: if the design lacks full column rank.
        DegenerateResponseError: if the response lies in the column space of the design.
    """
    n, k = problem.n, problem.k
    if n <= k:
        raise ImproperPosteriorError(
            f"The posterior is proper only if n > k; got n = {n}, k = {k}")
    rank = int(np.linalg.matrix_rank(problem.design))
    if rank < k:
        raise RankDeficientError(
            f"Design matrix has rank {rank} but {k} columns ({', '.join(problem.column_names)})")
    fit: OlsFit = least_squares(problem.design, problem.response)
    scale: float = max(float(np.linalg.norm(problem.response)), 1.0)
    if math.sqrt(fit.rss) <= _DEGENERATE_RESIDUAL_TOL * scale:
        raise DegenerateResponseError(
            "The response lies in the column space of the design (zero residual)")


def sigma_moment_bound(n: int, k: int) -> int:
    """Largest integer r for which the posterior moment E[sigma^r] is finite."""
    if n <= k:
        raise GuardViolation(f"sigma moments need n > k; got n = {n}, k = {k}")
    return n - k - 1


def check_params(problem: RegressionProblem, theta: ParamVector) -> None:
    family: ErrorFamily = problem.family
    if np.shape(theta.beta) != (problem.k,):
        raise GuardViolation(
            f"beta must have {problem.k} entries, got shape {np.shape(theta.beta)}")
    if not np.all(np.isfinite(theta.beta)):
        raise GuardViolation("beta must be finite")
    if not (math.isfinite(theta.sigma) and theta.sigma > 0):
        raise GuardViolation(f"sigma must be positive, got {theta.sigma}")
    if family.gamma_free and not (math.isfinite(theta.gamma) and theta.gamma > 0):
        raise GuardViolation(f"gamma must be positive, got {theta.gamma}")
    if family.nu_free and (theta.nu is None or not theta.nu > 2):
        raise GuardViolation(f"nu must exceed 2 for the {family.label} family, got {theta.nu}")


def error_spec(family: ErrorFamily, theta: ParamVector) -> CtptSpec:
    """The error distribution implied by the family, fixing the parameters it does not free."""
    gamma: float = theta.gamma if family.gamma_free else 1.0
    if family.nu_free and theta.nu is not None and math.isfinite(theta.nu):
        return CtptSpec(gamma, Finite(theta.nu))
    return CtptSpec(gamma, NormalLimit())


# --- likelihood and prior ---

def log_likelihood(problem: RegressionProblem, theta: ParamVector) -> float:
    check_params(problem, theta)
    spec: CtptSpec = error_spec(problem.family, theta)
    scaled = (problem.response - problem.design @ theta.beta) / theta.sigma
    return float(np.sum(ctpt.logpdf(scaled, spec))) - problem.n * math.log(theta.sigma)


def log_likelihood_uncentred(problem: RegressionProblem, theta: ParamVector) -> float:
    """Likelihood of the model whose errors follow the uncentred two-piece distribution."""
    check_params(problem, theta)
    spec: CtptSpec = error_spec(problem.family, theta)
    scaled = (problem.response - problem.design @ theta.beta) / theta.sigma
    return float(np.sum(ctpt.logpdf_uncentred(scaled, spec))) - problem.n * math.log(theta.sigma)


def loglik_equivalence_shift(problem: RegressionProblem, theta: ParamVector) -> float:
    """
    Absolute difference between the centred likelihood at intercept beta_0 and the
    uncentred likelihood at intercept beta_0 - sigma * m(gamma, nu).
    """
    index: int | None = problem.intercept_index
    if index is None:
        raise GuardViolation("The likelihood equivalence needs an intercept column")
    m: float = ctpt.offset_m(error_spec(problem.family, theta))
    shifted_beta = np.array(theta.beta, dtype=float)
    shifted_beta[index] -= theta.sigma * m
    shifted = ParamVector(shifted_beta, theta.sigma, theta.gamma, theta.nu)
    return abs(log_likelihood(problem, theta) - log_likelihood_uncentred(problem, shifted))


def prior_logpdf_gamma(gamma: ArrayLike, config: PriorConfig) -> float | np.ndarray:
    """Truncated gamma(shape, rate) log density on the open support interval."""
    a, b = config.gamma_shape, config.gamma_rate
    lower, upper = config.gamma_support
    log_mass: float = math.log(special.gammainc(a, b * upper) - special.gammainc(a, b * lower))
    arr = np.asarray(gamma, dtype=float)
    inside = (arr > lower) & (arr < upper)
    safe = np.where(inside, arr, 1.0)
    values = a * math.log(b) - special.gammaln(a) + (a - 1.0) * np.log(safe) - b * safe - log_mass
    values = np.where(inside, values, -np.inf)
    return float(values) if np.ndim(gamma) == 0 else values


def prior_logpdf_nu(nu: ArrayLike, config: PriorConfig) -> float | np.ndarray:
    """Exponential(rate d) log density shifted onto (2, inf)."""
    d: float = config.nu_rate
    arr = np.asarray(nu, dtype=float)
    values = np.where(arr > 2, math.log(d) - d * (arr - 2.0), -np.inf)
    return float(values) if np.ndim(nu) == 0 else values


def log_prior(theta: ParamVector, config: PriorConfig, family: ErrorFamily) -> float:
    if not theta.sigma > 0:
        return -math.inf
    total: float = -math.log(theta.sigma)
    if family.gamma_free:
        total += prior_logpdf_gamma(theta.gamma, config)
    if family.nu_free:
        total += prior_logpdf_nu(math.inf if theta.nu is None else theta.nu, config)
    return total


# --- unconstrained parameterisation ---

class ParameterTransform:
    """
    Maps between natural parameters and the sampler's unconstrained vector.

    gamma = L + (U - L) * expit(z) keeps gamma strictly inside its prior
    support (L, U); nu = 2 + exp(z); sigma = exp(z).
    """

    def __init__(self, problem: RegressionProblem) -> None:
        self.k: int = problem.k
        self.family: ErrorFamily = problem.family
        self.lower, self.upper = problem.priors.gamma_support
        self.names: list[str] = [*problem.column_names, "sigma"]
        if self.family.gamma_free:
            self.names.append("gamma")
        if self.family.nu_free:
            self.names.append("nu")

    @property
    def dim(self) -> int:
        return len(self.names)

    def to_unconstrained(self, theta: ParamVector) -> np.ndarray:
        z: list[float] = [*np.asarray(theta.beta, dtype=float), math.log(theta.sigma)]
        if self.family.gamma_free:
            z.append(float(special.logit((theta.gamma - self.lower) / (self.upper - self.lower))))
        if self.family.nu_free:
            if theta.nu is None:
                raise GuardViolation(f"The {self.family.label} family needs a finite nu")
            z.append(math.log(theta.nu - 2.0))
        return np.array(z)

    def to_natural_array(self, z: np.ndarray) -> np.ndarray:
        """Natural-space values in the same column order as `names`; accepts (dim,) or (rows, dim)."""
        z = np.asarray(z, dtype=float)
        natural = np.array(z, copy=True)
        with np.errstate(over="ignore"):
            natural[..., self.k] = np.exp(z[..., self.k])
            col: int = self.k + 1
            if self.family.gamma_free:
                natural[..., col] = self.lower + (self.upper - self.lower) * special.expit(z[..., col])
                col += 1
            if self.family.nu_free:
                natural[..., col] = 2.0 + np.exp(z[..., col])
        return natural

    def to_natural(self, z: np.ndarray) -> ParamVector:
        values = self.to_natural_array(z)
        col: int = self.k + 1
        gamma: float = 1.0
        nu: float | None = None
        if self.family.gamma_free:
            gamma = float(values[col])
            col += 1
        if self.family.nu_free:
            nu = float(values[col])
        return ParamVector(values[:self.k].copy(), float(values[self.k]), gamma, nu)

    def log_jacobian(self, z: np.ndarray) -> float:
        total: float = float(z[self.k])
        col: int = self.k + 1
        if self.family.gamma_free:
            # log((U - L) * s * (1 - s)) with s = expit(z)
            total += math.log(self.upper - self.lower) + \
                float(special.log_expit(z[col]) + special.log_expit(-z[col]))
            col += 1
        if self.family.nu_free:
            total += float(z[col])
        return total


class LogPosterior:
    """
    Unnormalized log posterior of a problem on the unconstrained scale, including
    the log-Jacobian of the transform. Returns -inf wherever the transform lands
    outside the support through overflow or underflow.
    """

    def __init__(self, problem: RegressionProblem) -> None:
        self.problem: RegressionProblem = problem
        self.transform: ParameterTransform = ParameterTransform(problem)

    def __call__(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            return -math.inf
        theta: ParamVector = self.transform.to_natural(z)
        if not (0 < theta.sigma < math.inf) or (theta.nu is not None and not 2 < theta.nu < math.inf):
            return -math.inf
        prior: float = log_prior(theta, self.problem.priors, self.problem.family)
        if not math.isfinite(prior):
            return -math.inf
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value: float = log_likelihood(self.problem, theta) + prior + self.transform.log_jacobian(z)
        return value if not math.isnan(value) else -math.inf


def log_posterior_unconstrained(problem: RegressionProblem, z: np.ndarray) -> float:
    return LogPosterior(problem)(z)
