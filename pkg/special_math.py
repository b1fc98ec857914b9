"""
Special functions, quadrature and seeded random-variate primitives used by every
other module.

Log-gamma, Student t densities and distribution functions are thin, domain-checked
wrappers around `scipy.special`; quadrature delegates to QUADPACK through
`scipy.integrate.quad` (infinite ranges are mapped onto finite ones by its
variable change); random streams are numpy `Generator`s over the counter-based
Philox bit generator, keyed by a master seed and a stream id so that every
replication owns an independent, reproducible stream.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate as sp_integrate
from scipy import special

from datatypes import QuadratureSettings
from errors import DomainError, QuadratureError

logger: logging.Logger = logging.getLogger(__name__)

LOG_SQRT_2PI: float = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SeededRng:
    """
    A reproducible random stream identified by (seed, stream_id).

    Children derived with `child()` are independent streams; the same
    (seed, stream_id, substream) always yields the same variate sequence.
    """
    seed: int
    stream_id: int = 0
    substream: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise DomainError("seed and stream_id must be 64-bit unsigned integers")
        seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *self.substream))
        object.__setattr__(self, "generator",
                           np.random.Generator(np.random.Philox(seq)))

    def child(self, index: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream_id, (*self.substream, index))


def _as_result(values: np.ndarray, like: ArrayLike) -> float | np.ndarray:
    if np.ndim(like) == 0:
        return float(values)
    return values


def log_gamma(x: ArrayLike) -> float | np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"log_gamma requires x > 0, got {x}")
    return _as_result(special.gammaln(arr), x)


def _check_nu(nu: float) -> None:
    if not nu > 0:
        raise DomainError(f"Degrees of freedom must be positive, got {nu}")


def standard_normal_logpdf(x: ArrayLike) -> float | np.ndarray:
    arr = np.asarray(x, dtype=float)
    return _as_result(-LOG_SQRT_2PI - 0.5 * arr * arr, x)


def student_t_logpdf(x: ArrayLike, nu: float) -> float | np.ndarray:
    _check_nu(nu)
    if math.isinf(nu):
        return standard_normal_logpdf(x)
    arr = np.asarray(x, dtype=float)
    # 1 / (sqrt(nu) * B(1/2, nu/2)) is the normalizer; betaln stays accurate for huge nu
    log_norm: float = -0.5 * math.log(nu) - float(special.betaln(0.5, 0.5 * nu))
    return _as_result(log_norm - 0.5 * (nu + 1.0) * np.log1p(arr * arr / nu), x)


def student_t_cdf(x: ArrayLike, nu: float) -> float | np.ndarray:
    _check_nu(nu)
    arr = np.asarray(x, dtype=float)
    if math.isinf(nu):
        return _as_result(special.ndtr(arr), x)
    return _as_result(special.stdtr(nu, arr), x)


def student_t_quantile(p: ArrayLike, nu: float) -> float | np.ndarray:
    _check_nu(nu)
    arr = np.asarray(p, dtype=float)
    if np.any((arr <= 0) | (arr >= 1)):
        raise DomainError(f"Quantile level must lie in (0, 1), got {p}")
    if math.isinf(nu):
        return _as_result(special.ndtri(arr), p)
    return _as_result(special.stdtrit(nu, arr), p)


def integrate(
    f: Callable[[float], float],
    lower: float,
    upper: float,
    settings: QuadratureSettings | None = None,
    breakpoints: Sequence[float] = (),
) -> float:
    """
    Integrates `f` over [lower, upper]; either endpoint may be infinite.

    `breakpoints` inside the range split the integral so that kinks (such as a
    two-piece density's mode) sit on panel edges.

    Raises:
        QuadratureError: if the subdivision limit is exhausted on any panel.
    """
    settings = settings or QuadratureSettings()
    if lower == upper:
        return 0.0
    sign: float = 1.0
    if lower > upper:
        lower, upper, sign = upper, lower, -1.0
    edges: list[float] = [lower, *sorted(b for b in breakpoints if lower < b < upper), upper]

    total: float = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        out = sp_integrate.quad(
            f, a, b,
            epsabs=settings.abs_tol,
            epsrel=settings.rel_tol,
            limit=settings.max_subdivisions,
            full_output=1,
        )
        value: float = out[0]
        if len(out) > 3:
            message: str = str(out[3])
            if "maximum number of subdivisions" in message:
                raise QuadratureError(
                    f"Quadrature on [{a}, {b}] exhausted {settings.max_subdivisions} subdivisions")
            logger.debug(f"Quadrature on [{a}, {b}] reported: {message}")
        total += value
    return sign * total


# --- random variates ---

def draw_standard_normal(rng: SeededRng, size: int | None = None) -> float | np.ndarray:
    return rng.generator.standard_normal(size)


def draw_student_t(rng: SeededRng, nu: float, size: int | None = None) -> float | np.ndarray:
    _check_nu(nu)
    if math.isinf(nu):
        return rng.generator.standard_normal(size)
    return rng.generator.standard_t(nu, size)


def draw_gamma(rng: SeededRng, shape: float, rate: float, size: int | None = None) -> float | np.ndarray:
    if not (shape > 0 and rate > 0):
        raise DomainError(f"Gamma shape and rate must be positive, got {shape}, {rate}")
    return rng.generator.gamma(shape, 1.0 / rate, size)


def draw_uniform(rng: SeededRng, size: int | None = None) -> float | np.ndarray:
    return rng.generator.random(size)
