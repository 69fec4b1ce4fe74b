"""Exception types shared across the package."""


class FNLSError(Exception):
    """Base class for all errors raised by :mod:`fnls`."""


class UnsupportedDomainDim(FNLSError, ValueError):
    pass


class BesselRootFailure(FNLSError, ArithmeticError):
    pass


class NonFinite(FNLSError, FloatingPointError):
    """A coefficient became NaN or Inf; usually the time step is too large."""


class Overflow(FNLSError, OverflowError):
    """The dissipation prefactor exp(xi^{-1}(||u||)) left the float range."""


class InsufficientEnsemble(FNLSError, ValueError):
    pass


class InsufficientSamples(FNLSError, ValueError):
    pass


class EmptyRegime(FNLSError, ValueError):
    pass


class ConfigError(FNLSError, ValueError):
    """Config text could not be parsed or failed validation.

    ``errors`` holds one message per problem, each prefixed by a line
    reference when one is known.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class StiffnessWarning(UserWarning):
    pass
