"""Exception hierarchy shared by every module."""


class PburgError(Exception):
    """Base class for all errors raised by the package."""


class ParseError(PburgError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class DomainError(PburgError, ArithmeticError):
    """An expression or map was evaluated outside its domain."""

    def __init__(self, message, subexpression=None):
        self.subexpression = subexpression
        if subexpression is not None:
            message = f"{message}: {subexpression}"
        super().__init__(message)


class UnboundVariableError(PburgError):
    pass


class IndeterminateError(PburgError):
    """A probabilistic zero test could not be carried out reliably."""


class ClassificationError(PburgError):
    pass


class QuadratureError(DomainError):
    """Quadrature failed, typically because the integrand is singular."""


class ParameterError(PburgError, ValueError):
    pass


class InversionError(PburgError):
    pass


class VerificationError(PburgError):
    pass


class DomainStarvationError(VerificationError):
    """Too few sample points fell inside the domain of a transformation."""
