"""
Exception hierarchy for the estimation engine
"""

from typing import List, Optional, Sequence, Tuple


class EngineError(Exception):
    """Base class for every error raised on purpose by the engine."""


class DomainError(EngineError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(EngineError):
    """A numerical routine did not reach its tolerance."""


class InvalidBracketError(EngineError, ValueError):
    """Root finding was called on a bracket without a sign change."""


class IterationCapError(EngineError):
    """Acceptance-rejection hit its iteration cap."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


class StratumCapError(EngineError):
    """A scheme would have more strata than the configured cap."""


class BudgetTooSmallError(EngineError, ValueError):
    """The simulation budget cannot give every stratum its minimum count."""


class NoInverseError(EngineError):
    """The transport map has no inverse (sampling-only models)."""


class NumericalOverflowError(EngineError, ArithmeticError):
    """A transform produced non-finite values."""


class TrainingDivergedError(EngineError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, trace: Sequence[Tuple[int, float, float]]):
        super().__init__(message)
        self.trace = list(trace)


class ModelFormatError(EngineError, ValueError):
    """A model file is malformed or has an unsupported version."""


class DimensionMismatchError(EngineError, ValueError):
    """Array or model dimensions do not agree."""


class CsvParseError(EngineError, ValueError):
    """A CSV cell could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class GmmCollapseError(EngineError):
    """A mixture component kept collapsing after re-initialisation."""


class ConfigError(EngineError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)
