"""
Exception hierarchy for ctptmed.

Every error carries the process exit code the command-line surface reports
for it: 2 for validation problems, 3 for numerical non-convergence and 4 for
I/O failures.
"""


class CtptmedError(Exception):
    exit_code: int = 1


# --- validation (exit code 2) ---

class ValidationFailure(CtptmedError, ValueError):
    exit_code = 2


class InvalidSpecError(ValidationFailure):
    """A distribution, prior or chain configuration violates its invariants."""


class DomainError(ValidationFailure):
    """An argument lies outside the mathematical domain of a function."""


class MomentUndefinedError(ValidationFailure):
    pass


class GuardViolation(ValidationFailure):
    """A parameter vector or problem violates a runtime guard."""


class ImproperPosteriorError(ValidationFailure):
    pass


class RankDeficientError(ValidationFailure):
    pass


class DegenerateResponseError(ValidationFailure):
    pass


class InsufficientDrawsError(ValidationFailure):
    pass


class InsufficientNullRunsError(ValidationFailure):
    pass


class ScenarioError(ValidationFailure):
    pass


class DataParseError(ValidationFailure):
    pass


# --- numerical (exit code 3) ---

class NumericalFailure(CtptmedError, ArithmeticError):
    exit_code = 3


class QuadratureError(NumericalFailure):
    pass


class NonFiniteLogPostError(NumericalFailure):
    pass


class DegenerateCovarianceError(NumericalFailure):
    pass


class NotConvergedError(NumericalFailure):
    pass


# --- I/O (exit code 4) ---

class ReportIOError(CtptmedError, OSError):
    exit_code = 4


def relabel(error: CtptmedError, label: str) -> CtptmedError:
    """Returns an error of the same type whose message is prefixed with `label`."""
    relabelled: CtptmedError = type(error)(f"{label}: {error}")
    return relabelled
