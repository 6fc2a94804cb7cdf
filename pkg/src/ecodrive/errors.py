"""Exception types shared across the package."""


class EcodriveError(Exception):
    """Base class for all package errors."""


class DomainError(EcodriveError, ValueError):
    """An input is outside the mathematical domain of an operation."""


class RouteRangeError(EcodriveError, ValueError):
    """A position lies outside the road profile."""


class ConstructionError(EcodriveError, ValueError):
    """Invalid parameters while building a model artifact."""


class FitError(EcodriveError, ValueError):
    """A least-squares or LP fit cannot be computed from the given samples."""


class InfeasibleError(EcodriveError, RuntimeError):
    """A subproblem has an empty feasible set."""


class SolverError(EcodriveError, RuntimeError):
    """A solver failed to produce a usable answer."""


class ParseError(EcodriveError, ValueError):
    """Malformed input file; carries a line number when available."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
