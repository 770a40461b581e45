"""Exception hierarchy shared by all jsslab modules."""


class JSSError(Exception):
    """Base class for every error raised by jsslab."""


class NumericFailure(JSSError):
    """A numerical procedure failed to reach its tolerance."""


class DegenerateCurve(JSSError):
    pass


class QuadratureFailure(NumericFailure):
    pass


class NotClosed(JSSError):
    pass


class OffsetTooLarge(JSSError):
    pass


class NoArcFound(JSSError):
    pass


class EnumerationBudget(JSSError):
    pass


class NotProperSubset(JSSError):
    pass


class FiberInversionFailure(NumericFailure):
    pass


class MeshQuality(JSSError):
    pass


class SolveFailure(NumericFailure):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class InconclusiveLimit(JSSError):
    pass


class DomainError(JSSError, ValueError):
    pass


class ExtrapolationFailure(NumericFailure):
    pass


class MeshTopology(JSSError):
    pass


class EigFailure(NumericFailure):
    pass


class NotPrincipal(NumericFailure):
    pass


class ParseError(JSSError):
    """Input file error with an optional source position (1-based)."""

    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        where = ""
        if line is not None:
            where = f"line {line}, column {column}: "
        if source:
            where = f"{source}: " + where
        super().__init__(where + message)
