"""Exception hierarchy shared by all latlab modules."""


class LatlabError(Exception):
    """Base class for every error raised by latlab."""


class ValidationError(LatlabError, ValueError):
    """Input object violates a structural invariant (unimodularity, monotonicity, ...)."""


class DomainError(LatlabError, ValueError):
    """Argument outside the domain where an operation is defined."""


class EnumerationOverflow(LatlabError, RuntimeError):
    """An enumeration would exceed its configured candidate cap."""


class NotInRange(LatlabError, ValueError):
    """An asymptotic correspondence is not yet defined at this scale."""


class OverflowGuard(LatlabError, OverflowError):
    """A flow exponent exceeds the floating-point safety guard."""
