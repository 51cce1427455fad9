"""Exception types shared across the package."""

from __future__ import annotations


class VortexLabError(Exception):
    """Base class for all package errors."""


class ConfigError(VortexLabError):
    """Invalid configuration file or experiment parameters."""


class CflError(VortexLabError):
    """Requested time step exceeds the advective stability bound."""

    def __init__(self, dt: float, admissible_dt: float):
        super().__init__(
            f"dt={dt:g} violates the CFL bound; admissible dt <= {admissible_dt:g}"
        )
        self.dt = dt
        self.admissible_dt = admissible_dt


class NumericalError(VortexLabError):
    """A solver invariant (mass, positivity, max principle) was violated."""


class DomainBreachError(VortexLabError):
    """A particle left the truncated computational domain."""


class SupportBreachError(VortexLabError):
    """An estimated density puts mass where the reference has none."""


class MaskError(VortexLabError):
    """A field evaluation was requested outside the valid density mask."""
