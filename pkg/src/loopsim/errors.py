"""Exception types raised across the package."""


class LoopSimError(Exception):
    """Base class for all package errors."""


class ValidationError(LoopSimError, ValueError):
    """A configuration or input value violates a documented invariant."""


class NonHermitian(ValidationError):
    pass


class UnnormalizedState(ValidationError):
    pass


class ZeroProbabilityCollapse(LoopSimError):
    pass


class NegativeAlpha(ValidationError):
    pass


class NoiseTimescaleOverflow(LoopSimError, OverflowError):
    pass


class SeriesTooShort(LoopSimError, ValueError):
    pass


class NoDecaySignal(LoopSimError):
    """Fewer than two lags exceed the fit floor; the data are consistent with tau = 0."""


class AllCensored(LoopSimError):
    pass


class EmptyEnsemble(LoopSimError, ValueError):
    pass


class ConfigError(ValidationError):
    """Malformed or unknown configuration key."""
