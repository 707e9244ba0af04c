"""Exception hierarchy shared by all modules."""


class SymwalksError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SymwalksError):
    pass


class NumericalFailure(SymwalksError):
    pass


class PositiveOffDiagonal(SymwalksError, ValueError):
    pass


class NegativeTime(SymwalksError, ValueError):
    pass


class NonfiniteExponential(NumericalFailure):
    pass


class Reducible(SymwalksError, ValueError):
    pass


class UnreachableEndpoint(SymwalksError, ValueError):
    pass


class EndpointMismatch(SymwalksError, ValueError):
    pass


class AlphaTooLarge(SymwalksError, ValueError):
    pass


class AnchorOutsideBox(SymwalksError, ValueError):
    pass


class AnchorMassTooSmall(SymwalksError, ValueError):
    pass


class BoxTooLargeForN(SymwalksError, ValueError):
    pass


class ConditionViolated(SymwalksError, ValueError):
    """Coordinate vector violates condition ``k`` (1-based) of the pair-measure chart."""

    def __init__(self, k, detail=""):
        self.k = k
        super().__init__(f"condition ({k}) violated{': ' + detail if detail else ''}")


class NonLinearFunctional(SymwalksError, TypeError):
    pass


class DegenerateWeights(NumericalFailure):
    pass


class NonConvergence(NumericalFailure):
    pass


class SupportViolation(SymwalksError, ValueError):
    pass


class ZeroMassSite(SymwalksError, ValueError):
    pass


class DimensionOverflow(SymwalksError, ValueError):
    pass


class DomainError(SymwalksError, ValueError):
    pass
