"""Exception hierarchy.

Every error raised on purpose by the library derives from ``OptsubError``.
The CLI maps ``DataError`` subclasses to exit code 2 and every other
``OptsubError`` to exit code 3.
"""

from __future__ import annotations


class OptsubError(Exception):
    """Base class for all library errors."""


class DataError(OptsubError):
    """Input data could not be read or does not fit the model."""


class NumericalError(OptsubError):
    """A numerical procedure failed."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaMismatch(DataError):
    pass


class InvalidObservation(DataError):
    """A response value is outside the support of the model family."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DomainError(NumericalError):
    """Parameter outside the admissible region (e.g. Gamma with x'theta >= 0)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SingularHessian(NumericalError):
    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3g})")


class SingularGram(SingularHessian):
    pass


class SingularCombination(SingularHessian):
    pass


class NonConvergence(NumericalError):
    """Newton iterations did not reach the stopping rule.

    ``separated`` is set when the iterates diverge monotonically, the
    signature of complete or quasi-complete separation in binary models.
    """

    def __init__(self, message: str, report=None, separated: bool = False):
        self.report = report
        self.separated = separated
        super().__init__(message)


class InvalidDistribution(NumericalError):
    pass


class EmptyPilot(NumericalError):
    pass


class EmptySecondStage(NumericalError):
    pass


class AllZeroNorms(NumericalError):
    pass


class NoValidG(NumericalError):
    pass


class ZeroPsi(NumericalError):
    pass


class ZeroProbNonzeroGrad(NumericalError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has zero sampling probability but a nonzero gradient")


class ExcessiveDiscards(NumericalError):
    """More than 10% of Monte Carlo replicates failed in at least one cell."""

    def __init__(self, message: str, table=None):
        self.table = table
        super().__init__(message)
