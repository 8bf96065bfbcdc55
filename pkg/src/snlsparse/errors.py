"""Exception types raised across the package."""


class SNLError(Exception):
    """Base class for all package errors."""


class SupportOffGrid(SNLError, ValueError):
    pass


class DegenerateColumn(SNLError, ValueError):
    pass


class EmptySupport(SNLError, ValueError):
    pass


class ParseError(SNLError, ValueError):
    pass


class DimensionMismatch(SNLError, ValueError):
    pass


class SingularSystem(SNLError, ArithmeticError):
    pass


class DegenerateSensitivity(SNLError, ValueError):
    """The feature map is locally flat: ``||phi'(theta)||^2`` vanishes."""


class NearRegionNotConcave(SNLError, ValueError):
    pass


class NeedTwoPoints(SNLError, ValueError):
    pass


class OverlappingDecayRegions(SNLError, ValueError):
    pass


class AlgebraicViolated(SNLError, ValueError):
    pass


class GammaTwoNotLessThanOne(SNLError, ValueError):
    pass


class SeparationTooSmall(SNLError, ValueError):
    pass


class DegenerateDirections(SNLError, ValueError):
    pass


class TooLarge(SNLError, ValueError):
    pass


class Infeasible(SNLError, ValueError):
    pass


class NotConverged(SNLError, RuntimeError):
    """Iteration budget exhausted; ``best`` carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
