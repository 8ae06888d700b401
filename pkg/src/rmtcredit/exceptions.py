"""Exception types raised by the library."""


class RMTCreditError(Exception):
    """Base class for all library errors."""


class AlignmentError(RMTCreditError, ValueError):
    """Price series do not share a common timestamp grid."""


class DomainError(RMTCreditError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class DegenerateSeriesError(RMTCreditError, ValueError):
    """A series has zero variance where a normalization is required."""

    def __init__(self, asset, message=None):
        self.asset = asset
        super().__init__(message or f"asset {asset!r} has zero variance in the window")


class ContractViolation(RMTCreditError, ValueError):
    """An input violates the documented precondition of an operation."""


class ParseError(RMTCreditError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(RMTCreditError, ArithmeticError):
    """A numerical routine failed (decomposition, quadrature, root finding)."""
