"""Exception and warning types raised across the package."""


class MarginLossError(Exception):
    """Base class for all errors raised by marginloss."""


class ZeroRowError(MarginLossError, ValueError):
    pass


class DimensionMismatchError(MarginLossError, ValueError):
    pass


class NonFiniteError(MarginLossError, ValueError):
    pass


class InvalidFamilyError(MarginLossError, ValueError):
    pass


class InvalidSpecError(MarginLossError, ValueError):
    pass


class NegativeSigmaError(MarginLossError, ValueError):
    pass


class LengthMismatchError(MarginLossError, ValueError):
    pass


class RejectionFailureError(MarginLossError, RuntimeError):
    pass


class DivergenceError(MarginLossError, RuntimeError):
    pass


class DegenerateFoldError(MarginLossError, ValueError):
    pass


class EmptyGalleryError(MarginLossError, ValueError):
    pass


class RequiresTwoDError(MarginLossError, ValueError):
    pass


class FormatError(MarginLossError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ConfigError(MarginLossError, ValueError):
    pass


class MarginOverflowWarning(UserWarning):
    """A target angle plus its additive margin exceeds pi."""


class NumericalInstabilityWarning(UserWarning):
    """|sin(theta)| fell below 1e-6 at a target entry in the backward pass."""


class InsufficientImpostorsWarning(UserWarning):
    """Too few impostor scores to resolve the requested FAR."""
