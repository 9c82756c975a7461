class PhotonicPPOError(Exception):
    """Base class for errors raised by this package."""


class InvalidConfigError(PhotonicPPOError, ValueError):
    """A configuration value is out of its allowed range."""


class ShapeError(PhotonicPPOError, ValueError):
    """Array shapes, gate arity or mode indices do not line up."""


class GateDomainError(PhotonicPPOError, ValueError):
    """A gate magnitude exceeds the safety limit for the configured cutoff."""


class NumericalDegeneracyError(PhotonicPPOError, ArithmeticError):
    """A quantity needed for normalization vanished or became non-finite."""


class EpisodeDoneError(PhotonicPPOError, RuntimeError):
    """The environment was stepped after the episode had terminated."""
