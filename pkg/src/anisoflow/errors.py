"""Exception types shared across the package."""

from __future__ import annotations


class AnisoflowError(Exception):
    """Base class for all package errors."""


class DomainError(AnisoflowError, ValueError):
    """Argument outside the domain where the quantity is defined."""


class PreconditionError(AnisoflowError, ValueError):
    """An operation was called with arguments violating its precondition."""


class IntegrandInvalidError(AnisoflowError):
    """The integrand fails a structural requirement (e.g. convexity)."""


class HypothesisNotMetError(AnisoflowError):
    """A theorem hypothesis does not hold for the given integrand.

    ``condition`` names the failed condition, e.g. ``"symmetry condition (4)"``.
    """

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        self.detail = detail
        msg = f"hypothesis not met: {condition}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnresolvedConstantError(AnisoflowError):
    """A sampled constant did not stabilise within the search budget."""

    def __init__(self, message: str, lower_bound: float):
        self.lower_bound = lower_bound
        super().__init__(f"{message}; best lower bound {lower_bound:.6g}")


class StepRejectedError(AnisoflowError):
    """Requested time step exceeds the CFL limit."""

    def __init__(self, dt: float, admissible_dt: float):
        self.dt = dt
        self.admissible_dt = admissible_dt
        super().__init__(f"dt={dt:.6g} exceeds CFL limit {admissible_dt:.6g}")


class BlowUpError(AnisoflowError):
    """The discrete solution became non-finite."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite field detected at t={t:.6g}")


class ConfigError(AnisoflowError, ValueError):
    """Malformed or inconsistent configuration."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
