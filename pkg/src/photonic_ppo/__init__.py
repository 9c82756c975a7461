"""Photonic PPO: a Fock-basis photonic circuit as a PPO policy on restricted CartPole."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    EpisodeDoneError,
    GateDomainError,
    InvalidConfigError,
    NumericalDegeneracyError,
    PhotonicPPOError,
    ShapeError,
)

__all__ = [
    "EpisodeDoneError",
    "GateDomainError",
    "InvalidConfigError",
    "NumericalDegeneracyError",
    "PhotonicPPOError",
    "ShapeError",
    "__version__",
]
