"""
The Centred Two-Piece Student t (CTPT) distribution family.

The uncentred two-piece density scales a symmetric base (Student t or, in the
normal limit, the standard normal) by gamma to the right of zero and by 1/gamma
to the left, which keeps the mode at zero. The centred form shifts it by the
uncentred mean m(gamma, nu) so the mean becomes zero and the mode moves to -m.

All functions accept scalars or numpy arrays for `x` / `p` and return the same
shape.
"""

import logging
import math

import numpy as np
from numpy.typing import ArrayLike

from datatypes import CtptSpec, Finite, NormalLimit, TailSpec
from errors import DomainError, MomentUndefinedError
from special_math import (
    SeededRng,
    draw_student_t,
    draw_uniform,
    log_gamma,
    standard_normal_logpdf,
    student_t_cdf,
    student_t_logpdf,
    student_t_quantile,
)

logger: logging.Logger = logging.getLogger(__name__)

_QUANTILE_NEWTON_STEPS: int = 2


def _base_logpdf(x: ArrayLike, tail: TailSpec) -> float | np.ndarray:
    match tail:
        case Finite(nu=nu):
            return student_t_logpdf(x, nu)
        case NormalLimit():
            return standard_normal_logpdf(x)


def _base_cdf(x: ArrayLike, tail: TailSpec) -> float | np.ndarray:
    return student_t_cdf(x, tail.nu if isinstance(tail, Finite) else math.inf)


def _base_quantile(p: ArrayLike, tail: TailSpec) -> float | np.ndarray:
    return student_t_quantile(p, tail.nu if isinstance(tail, Finite) else math.inf)


def base_abs_moment(k: int, tail: TailSpec) -> float:
    """E|T|^k of the symmetric base; requires nu > k for a Student t base."""
    if k == 0:
        return 1.0
    match tail:
        case Finite(nu=nu):
            if nu <= k:
                raise MomentUndefinedError(
                    f"E|T|^{k} is undefined for nu = {nu} <= {k}")
            return math.exp(
                0.5 * k * math.log(nu)
                + log_gamma(0.5 * (k + 1))
                + log_gamma(0.5 * (nu - k))
                - log_gamma(0.5 * nu)
                - 0.5 * math.log(math.pi)
            )
        case NormalLimit():
            return math.exp(0.5 * k * math.log(2.0) + log_gamma(0.5 * (k + 1)) - 0.5 * math.log(math.pi))


def offset_m(spec: CtptSpec) -> float:
    """Mean of the uncentred two-piece distribution, m(gamma, nu)."""
    if spec.gamma == 1.0:
        return 0.0
    return (spec.gamma - 1.0 / spec.gamma) * base_abs_moment(1, spec.tail)


def logpdf_uncentred(x: ArrayLike, spec: CtptSpec) -> float | np.ndarray:
    g: float = spec.gamma
    arr = np.asarray(x, dtype=float)
    scaled = np.where(arr >= 0, arr / g, arr * g)
    values = math.log(2.0 / (g + 1.0 / g)) + np.asarray(_base_logpdf(scaled, spec.tail))
    return float(values) if np.ndim(x) == 0 else values


def logpdf(x: ArrayLike, spec: CtptSpec) -> float | np.ndarray:
    arr = np.asarray(x, dtype=float)
    values = logpdf_uncentred(arr + offset_m(spec), spec)
    return float(values) if np.ndim(x) == 0 else values


def pdf(x: ArrayLike, spec: CtptSpec) -> float | np.ndarray:
    values = np.exp(logpdf(x, spec))
    return float(values) if np.ndim(x) == 0 else values


def mode(spec: CtptSpec) -> float:
    return -offset_m(spec)


def mean(spec: CtptSpec) -> float:
    return 0.0


def variance(spec: CtptSpec) -> float:
    g2: float = spec.gamma ** 2
    spread: float = g2 - 1.0 + 1.0 / g2
    m: float = offset_m(spec)
    match spec.tail:
        case Finite(nu=nu):
            return nu / (nu - 2.0) * spread - m * m
        case NormalLimit():
            return spread - m * m


def uncentred_raw_moment(k: int, spec: CtptSpec) -> float:
    """E[Y^k] of the uncentred two-piece distribution."""
    g: float = spec.gamma
    weight: float = (g ** (k + 1) + (-1) ** k * g ** (-k - 1)) / (g + 1.0 / g)
    return weight * base_abs_moment(k, spec.tail)


def raw_moment(r: int, spec: CtptSpec) -> float:
    """
    E[X^r] of the centred distribution.

    Raises:
        MomentUndefinedError: if the base is Student t with nu <= r.
    """
    if r < 1:
        raise DomainError(f"Moment order must be a positive integer, got {r}")
    if isinstance(spec.tail, Finite) and spec.tail.nu <= r:
        raise MomentUndefinedError(
            f"E[X^{r}] exists only for nu > {r}, got nu = {spec.tail.nu}")
    if r == 1:
        return 0.0
    if r == 2:
        return variance(spec)
    m: float = offset_m(spec)
    return sum(
        math.comb(r, k) * (-m) ** (r - k) * uncentred_raw_moment(k, spec)
        for k in range(r + 1)
    )


def skewness_fisher(spec: CtptSpec) -> float:
    if isinstance(spec.tail, Finite) and spec.tail.nu <= 3:
        raise MomentUndefinedError(
            f"Fisher skewness exists only for nu > 3, got nu = {spec.tail.nu}")
    if spec.gamma == 1.0:
        return 0.0
    return raw_moment(3, spec) / variance(spec) ** 1.5


def skewness_ag(gamma: float) -> float:
    """Arnold-Groeneveld skewness: one minus twice the mass left of the mode."""
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    g2: float = gamma * gamma
    return (g2 - 1.0) / (g2 + 1.0)


def cdf(x: ArrayLike, spec: CtptSpec) -> float | np.ndarray:
    g: float = spec.gamma
    g2: float = g * g
    y = np.asarray(x, dtype=float) + offset_m(spec)
    left = 2.0 / (1.0 + g2) * np.asarray(_base_cdf(np.minimum(y, 0.0) * g, spec.tail))
    right = 1.0 / (1.0 + g2) + 2.0 * g2 / (1.0 + g2) * \
        (np.asarray(_base_cdf(np.maximum(y, 0.0) / g, spec.tail)) - 0.5)
    values = np.where(y < 0, left, right)
    return float(values) if np.ndim(x) == 0 else values


def quantile(p: ArrayLike, spec: CtptSpec) -> float | np.ndarray:
    """
    Inverse of `cdf`: piecewise inversion of the base quantile function,
    polished by Newton steps on the centred cdf.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise DomainError(f"Quantile level must lie in (0, 1), got {p}")
    g: float = spec.gamma
    g2: float = g * g
    p_mode: float = 1.0 / (1.0 + g2)
    left_level = np.clip(arr * (1.0 + g2) / 2.0, 1e-300, 0.5)
    right_level = np.clip((arr - p_mode) * (1.0 + g2) / (2.0 * g2) + 0.5, 0.5, 1.0 - 1e-16)
    y = np.where(
        arr < p_mode,
        np.asarray(_base_quantile(left_level, spec.tail)) / g,
        np.asarray(_base_quantile(right_level, spec.tail)) * g,
    )
    x = y - offset_m(spec)
    for _ in range(_QUANTILE_NEWTON_STEPS):
        density = np.asarray(pdf(x, spec))
        step = np.where(density > 0, (np.asarray(cdf(x, spec)) - arr) / np.where(density > 0, density, 1.0), 0.0)
        x = x - step
    return float(x) if np.ndim(p) == 0 else x


def sample(n: int, spec: CtptSpec, rng: SeededRng) -> np.ndarray:
    """
    Draws n variates: with probability gamma^2 / (1 + gamma^2) emit gamma*|T|,
    otherwise -|T|/gamma, then subtract m(gamma, nu).
    """
    if n < 1:
        raise DomainError(f"Sample size must be at least 1, got {n}")
    g: float = spec.gamma
    nu: float = spec.tail.nu if isinstance(spec.tail, Finite) else math.inf
    magnitude = np.abs(np.asarray(draw_student_t(rng, nu, n)))
    right = np.asarray(draw_uniform(rng, n)) < g * g / (1.0 + g * g)
    return np.where(right, g * magnitude, -magnitude / g) - offset_m(spec)
