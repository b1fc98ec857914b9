"""
This module defines the core data structures and types used throughout the application.

It includes the distribution specifications (`CtptSpec`, `Finite`, `NormalLimit`),
the regression model inputs (`RegressionProblem`, `ErrorFamily`, `PriorConfig`,
`ParamVector`, `OlsFit`), sampler outputs (`ChainConfig`, `Draws`, `Diagnostics`,
`EvidenceResult`), mediation results (`MediationData`, `NullPartition`,
`SummaryRow`, `MediationResult`), the simulation-study schema (`ScenarioConfig`
and the `ErrorSpec` variants, validated with pydantic) and the command/event
plumbing used by the command-line surface.
"""

import argparse
import logging
import math
import sys
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Annotated, Any, Literal, TypeAlias

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import InvalidSpecError

logger: logging.Logger = logging.getLogger(__name__)


# --- numerics ---

@dataclass(frozen=True)
class QuadratureSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 2000

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidSpecError(
                f"Quadrature tolerances must be positive, got {self.abs_tol}, {self.rel_tol}")
        if self.max_subdivisions < 1:
            raise InvalidSpecError("max_subdivisions must be at least 1")


# --- distribution ---

@dataclass(frozen=True)
class Finite:
    """Student t base with `nu` degrees of freedom; finite variance needs nu > 2."""
    nu: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.nu) and self.nu > 2):
            raise InvalidSpecError(
                f"Finite tail requires 2 < nu < inf, got {self.nu}")

    def __str__(self) -> str:
        return f"{self.nu:g}"


@dataclass(frozen=True)
class NormalLimit:
    """The standard normal base (nu = inf)."""

    def __str__(self) -> str:
        return "inf"


TailSpec: TypeAlias = Finite | NormalLimit


def parse_tail(value: float | str | None) -> TailSpec:
    """Accepts a degrees-of-freedom value, or None / "inf" for the normal base."""
    if value is None:
        return NormalLimit()
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "normal"):
            return NormalLimit()
        try:
            value = float(value)
        except ValueError:
            raise InvalidSpecError(f"Invalid tail parameter: {value!r}")
    if math.isinf(value):
        return NormalLimit()
    return Finite(float(value))


@dataclass(frozen=True)
class CtptSpec:
    gamma: float
    tail: TailSpec = field(default_factory=NormalLimit)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidSpecError(
                f"Skewness parameter gamma must be positive, got {self.gamma}")

    @property
    def nu(self) -> float:
        return self.tail.nu if isinstance(self.tail, Finite) else math.inf


# --- regression ---

class ErrorFamily(Enum):
    """
    The four nested error models, named by which CTPT parameters are free.
    """
    FULL = "full"
    GAMMA_ONLY = "gamma-only"
    NU_ONLY = "nu-only"
    NORMAL = "normal"

    @property
    def gamma_free(self) -> bool:
        return self in (ErrorFamily.FULL, ErrorFamily.GAMMA_ONLY)

    @property
    def nu_free(self) -> bool:
        return self in (ErrorFamily.FULL, ErrorFamily.NU_ONLY)

    @property
    def label(self) -> str:
        return {
            ErrorFamily.FULL: "Full",
            ErrorFamily.GAMMA_ONLY: "gamma-Only",
            ErrorFamily.NU_ONLY: "nu-Only",
            ErrorFamily.NORMAL: "Normal",
        }[self]


@dataclass(frozen=True)
class PriorConfig:
    """
    Hyperparameters of the truncated gamma prior on gamma and the shifted
    exponential prior on nu. beta and sigma always get p(beta, sigma) ∝ 1/sigma.
    """
    gamma_shape: float = 2.0
    gamma_rate: float = 2.0
    gamma_support: tuple[float, float] = (0.05, 20.0)
    nu_rate: float = 0.01

    def __post_init__(self) -> None:
        if min(self.gamma_shape, self.gamma_rate, self.nu_rate) <= 0:
            raise InvalidSpecError("Prior hyperparameters must be positive")
        lower, upper = self.gamma_support
        if not (0 < lower <= 1 <= upper < math.inf):
            raise InvalidSpecError(
                f"gamma support must satisfy 0 < lower <= 1 <= upper < inf, got {self.gamma_support}")


@dataclass
class ParamVector:
    """
    Natural-space regression parameters. `nu` is None when the base is normal;
    `gamma` stays 1 for families that fix it.
    """
    beta: np.ndarray
    sigma: float
    gamma: float = 1.0
    nu: float | None = None

    def ctpt_spec(self) -> CtptSpec:
        return CtptSpec(self.gamma, NormalLimit() if self.nu is None else Finite(self.nu))


@dataclass(frozen=True)
class OlsFit:
    """Ordinary least-squares fit; `sigma` is sqrt(RSS / (n - k))."""
    coefficients: np.ndarray
    residuals: np.ndarray
    rss: float
    sigma: float
    standard_errors: np.ndarray


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    design: np.ndarray
    response: np.ndarray
    family: ErrorFamily = ErrorFamily.FULL
    priors: PriorConfig = field(default_factory=PriorConfig)
    column_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        design = np.array(self.design, dtype=float)
        if design.ndim == 1:
            design = design.reshape(-1, 1)
        response = np.array(self.response, dtype=float).ravel()
        if design.shape[0] != response.shape[0]:
            raise InvalidSpecError(
                f"Design has {design.shape[0]} rows but response has {response.shape[0]} values")
        design.setflags(write=False)
        response.setflags(write=False)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "response", response)
        if not self.column_names:
            object.__setattr__(self, "column_names", tuple(
                f"x{j}" for j in range(design.shape[1])))

    @property
    def n(self) -> int:
        return int(self.design.shape[0])

    @property
    def k(self) -> int:
        return int(self.design.shape[1])

    @property
    def intercept_index(self) -> int | None:
        """Index of the first all-ones column, if the design has one."""
        for j in range(self.k):
            if np.all(self.design[:, j] == 1.0):
                return j
        return None

    def with_family(self, family: ErrorFamily) -> "RegressionProblem":
        return RegressionProblem(self.design, self.response, family, self.priors, self.column_names)

    def without_column(self, index: int) -> "RegressionProblem":
        keep: list[int] = [j for j in range(self.k) if j != index]
        return RegressionProblem(
            self.design[:, keep], self.response, self.family, self.priors,
            tuple(self.column_names[j] for j in keep))


# --- sampling ---

@dataclass(frozen=True)
class ChainConfig:
    total_iterations: int = 30000
    burn_in_fraction: float = 0.2
    n_chains: int = 1
    adapt_window: int = 50
    target_accept: float = 0.44
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.burn_in_fraction < 1:
            raise InvalidSpecError("burn_in_fraction must lie in (0, 1)")
        if self.total_iterations < 1000:
            raise InvalidSpecError("total_iterations must be at least 1000")
        if self.n_chains < 1 or self.adapt_window < 1:
            raise InvalidSpecError("n_chains and adapt_window must be positive")
        if not 0 < self.target_accept < 1:
            raise InvalidSpecError("target_accept must lie in (0, 1)")

    @property
    def burn_in(self) -> int:
        return int(round(self.total_iterations * self.burn_in_fraction))

    @property
    def kept_per_chain(self) -> int:
        return self.total_iterations - self.burn_in


@dataclass
class Draws:
    """
    Post-burn-in draws of one or more chains, stacked chain after chain.

    Attributes:
        natural: (rows x dim) draws in the natural parameter space.
        unconstrained: the same draws in the sampler's unconstrained space.
        names: parameter names, one per column.
        n_chains: number of chains stacked in the rows.
        acceptance: post-burn-in acceptance rate per parameter (mean over chains).
        step_sizes: frozen proposal scales per chain and parameter.
        seed: master seed the chains were drawn with.
        stream_id: random stream of the fit.
        stuck: True when any chain accepted fewer than 1% of proposals after burn-in.
        substream: sub-stream path under `stream_id` the chains were drawn from.
    """
    natural: np.ndarray
    unconstrained: np.ndarray
    names: list[str]
    n_chains: int
    acceptance: np.ndarray
    step_sizes: np.ndarray
    seed: int
    stream_id: int
    stuck: bool = False
    substream: tuple[int, ...] = ()

    @property
    def n_rows(self) -> int:
        return int(self.natural.shape[0])

    @property
    def per_chain(self) -> int:
        return self.n_rows // self.n_chains

    def column(self, name: str) -> np.ndarray:
        return self.natural[:, self.names.index(name)]

    def chains(self, unconstrained: bool = False) -> np.ndarray:
        """Returns a (n_chains, per_chain, dim) view of the draws."""
        source: np.ndarray = self.unconstrained if unconstrained else self.natural
        return source.reshape(self.n_chains, self.per_chain, source.shape[1])


@dataclass
class Diagnostics:
    rhat: dict[str, float]
    ess: dict[str, float]
    acceptance_rate: float
    flagged: list[str] = field(default_factory=list)
    stuck: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "rhat": {k: _json_float(v) for k, v in self.rhat.items()},
            "ess": {k: _json_float(v) for k, v in self.ess.items()},
            "acceptance_rate": self.acceptance_rate,
            "flagged": self.flagged,
            "stuck": self.stuck,
        }


@dataclass
class EvidenceResult:
    log_marginal_likelihood: float
    approx_standard_error: float
    iterations_used: int
    converged: bool

    def to_dict(self) -> dict[str, Any]:
        return {k: _json_float(v) if isinstance(v, float) else v for k, v in asdict(self).items()}


# --- mediation ---

@dataclass(frozen=True, eq=False)
class MediationData:
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x, m, y = (np.array(v, dtype=float).ravel()
                   for v in (self.x, self.m, self.y))
        if not (len(x) == len(m) == len(y)):
            raise InvalidSpecError(
                f"x, m, y must have equal lengths, got {len(x)}, {len(m)}, {len(y)}")
        if len(x) < 4:
            raise InvalidSpecError(
                f"Mediation needs at least 4 observations, got {len(x)}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.x)

    def permuted(self, order: np.ndarray) -> "MediationData":
        return MediationData(self.x[order], self.m[order], self.y[order])


@dataclass(frozen=True)
class NullPartition:
    """
    Prior split of H0 into (alpha=0, beta=0), (alpha=0, beta!=0), (alpha!=0, beta=0).
    """
    q00: float = 1 / 3
    q01: float = 1 / 3
    q10: float = 1 / 3

    def __post_init__(self) -> None:
        if min(self.q00, self.q01, self.q10) < 0:
            raise InvalidSpecError("Null partition probabilities must be nonnegative")
        if abs(self.q00 + self.q01 + self.q10 - 1.0) > 1e-12:
            raise InvalidSpecError(
                f"Null partition must sum to 1, got {self.q00 + self.q01 + self.q10}")

    @classmethod
    def normalized(cls, q00: float, q01: float, q10: float) -> Self:
        total: float = q00 + q01 + q10
        if total <= 0:
            raise InvalidSpecError("Null partition needs positive total mass")
        return cls(q00 / total, q01 / total, q10 / total)


@dataclass(frozen=True)
class SummaryRow:
    mean: float
    mode: float
    p2_5: float
    p25: float
    p50: float
    p75: float
    p97_5: float
    ci_length: float

    def covers(self, value: float) -> bool:
        return self.p2_5 <= value <= self.p97_5

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class MediationResult:
    """
    Posterior output of a mediation fit.

    The alpha and beta draws come from independently fitted regressions and are
    paired index-wise, so `ab_draws[i] == alpha_draws[i] * beta_draws[i]`.
    Bayes factors are None when the fit ran without evidence estimation.
    """
    family: ErrorFamily
    alpha_draws: np.ndarray
    beta_draws: np.ndarray
    ab_draws: np.ndarray
    summaries: dict[str, SummaryRow]
    diagnostics: dict[str, Diagnostics]
    partition: NullPartition
    evidence: dict[str, EvidenceResult] = field(default_factory=dict)
    bf_alpha: float | None = None
    bf_beta: float | None = None
    bf_med: float | None = None
    hpd: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class BootstrapResult:
    estimate: float
    ci: tuple[float, float]
    reject: bool
    resamples_used: int
    resamples_dropped: int


# --- simulation studies ---

class NullVariant(Enum):
    BOTH_ZERO = "both_zero"
    ALPHA_ZERO = "alpha_zero"
    BETA_ZERO = "beta_zero"


class CtptErr(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["ctpt"] = "ctpt"
    gamma: float = Field(gt=0)
    nu: float | Literal["inf"] | None = None

    @field_validator("nu")
    @classmethod
    def check_nu(cls, v: float | str | None) -> float | str | None:
        if isinstance(v, float) and math.isfinite(v) and v <= 2:
            raise ValueError("nu must exceed 2")
        return v

    def ctpt_spec(self) -> CtptSpec:
        return CtptSpec(self.gamma, parse_tail(self.nu))

    def label(self) -> str:
        return f"ctpt({self.gamma:g},{parse_tail(self.nu)})"


class TukeyGH(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["tukey"] = "tukey"
    g: float
    h: float = Field(ge=0, lt=1)

    def label(self) -> str:
        return f"tukey({self.g:g},{self.h:g})"


class NormalErr(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["normal"] = "normal"

    def label(self) -> str:
        return "normal"


ErrorSpec: TypeAlias = Annotated[CtptErr | TukeyGH | NormalErr, Field(discriminator="kind")]


class BootstrapSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    enabled: bool = False
    resamples: int = Field(default=1999, ge=199)
    level: float = Field(default=0.95, gt=0, lt=1)


class ScenarioConfig(BaseModel):
    """
    One data-generating scenario of a simulation study, as read from a scenario file.
    """
    model_config = ConfigDict(extra="forbid")

    schema_version: int = 1
    name: str = "scenario"
    n: int = Field(default=50, ge=5)
    alpha: float = 0.4
    beta: float = 0.4
    tau: float = 0.2
    intercepts: tuple[float, float] = (0.0, 0.0)
    sigma_m: float = Field(default=1.0, gt=0)
    sigma_y: float = Field(default=1.0, gt=0)
    err_m: ErrorSpec = Field(default_factory=NormalErr)
    err_y: ErrorSpec = Field(default_factory=NormalErr)
    null_variant: NullVariant | None = None
    families: list[ErrorFamily] = Field(default_factory=lambda: [ErrorFamily.FULL])
    replications: int | None = Field(default=None, ge=1)
    cutoff: float | None = Field(default=None, gt=0)
    match_fpr: list[float] = Field(default_factory=list)
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)

    @model_validator(mode="after")
    def check_targets(self) -> Self:
        for target in self.match_fpr:
            if not 0 < target < 1:
                raise ValueError(f"match_fpr targets must lie in (0, 1), got {target}")
        return self

    @property
    def true_ab(self) -> float:
        return self.alpha * self.beta

    def is_null(self) -> bool:
        return self.null_variant is not None or self.alpha * self.beta == 0

    def with_null(self, variant: NullVariant) -> "ScenarioConfig":
        alpha: float = self.alpha
        beta: float = self.beta
        if variant in (NullVariant.BOTH_ZERO, NullVariant.ALPHA_ZERO):
            alpha = 0.0
        if variant in (NullVariant.BOTH_ZERO, NullVariant.BETA_ZERO):
            beta = 0.0
        return self.model_copy(update={"alpha": alpha, "beta": beta, "null_variant": variant})


@dataclass(frozen=True)
class StudyConfig:
    """Everything a replication worker needs besides the scenario; `chain.seed` is the master seed."""
    chain: ChainConfig
    priors: PriorConfig = field(default_factory=PriorConfig)
    partition: NullPartition = field(default_factory=NullPartition)
    threads: int | None = None

    @property
    def seed(self) -> int:
        return self.chain.seed


@dataclass
class ExperimentResult:
    """
    Aggregated output of a recovery or power study for one scenario and family.

    Attributes:
        mode: "recovery" or "power".
        scenario: name of the scenario.
        family: error family fitted.
        replications: replications attempted (alt + null for power studies).
        failures: replications that raised and were skipped.
        records: one flat dict per replication.
        aggregates: per-quantity column means and SDs of SummaryRows.
        coverage: CI coverage of the true mediation effect (recovery).
        tpr, fpr: detection rates at `cutoff` (power).
        matched: TPR at cutoffs matched to target FPRs, keyed by label.
        metadata: generator choices recorded for auditability.
    """
    mode: str
    scenario: str
    family: ErrorFamily
    replications: int
    failures: int
    records: list[dict[str, Any]]
    aggregates: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    coverage: float | None = None
    tpr: float | None = None
    fpr: float | None = None
    cutoff: float | None = None
    matched: dict[str, dict[str, float]] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)


# --- command-line plumbing ---

@dataclass
class Command:
    """
    Represents a registered command-line subcommand.

    Attributes:
        name: The subcommand name.
        handler: Runs the command with the parsed arguments and returns an exit code.
        configure: Adds the subcommand's arguments to its parser.
        help_text: A description shown in the CLI help.
    """
    name: str
    handler: Callable[[argparse.Namespace], int]
    configure: Callable[[argparse.ArgumentParser], None]
    help_text: str


class Event(Enum):
    """
    Enum to define the available events
    """
    CHAIN_FINISHED = "chain_finished"
    REPLICATION_FINISHED = "replication_finished"
    EXPERIMENT_FINISHED = "experiment_finished"


def _json_float(value: float) -> float | None:
    return value if math.isfinite(value) else None
