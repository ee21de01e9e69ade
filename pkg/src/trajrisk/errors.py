"""Exception hierarchy shared by all modules."""


class TrajRiskError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TrajRiskError, ValueError):
    """Invalid problem, schedule or experiment configuration."""


class NumericalFailure(TrajRiskError, ArithmeticError):
    """A non-finite value appeared in iterate column ``t`` (0-based)."""

    def __init__(self, t, message=None):
        self.t = t
        super().__init__(message or f"non-finite iterate at column t={t}")


class CapacityError(TrajRiskError):
    """Dense assembly requested beyond the configured size cap."""


class SingularityError(TrajRiskError, ArithmeticError):
    """A diagonal entry of a triangular weight system is (numerically) zero."""

    def __init__(self, t, value, tol):
        self.t = t
        self.value = value
        self.tol = tol
        super().__init__(
            f"diagonal entry {t} is {value:.3e}, below tolerance {tol:.3e}"
        )


class KinkError(TrajRiskError):
    """A finite-difference perturbation crossed a non-smooth point."""
