"""Exception types shared across the package."""


class TicusumError(Exception):
    """Base class for all package-specific errors."""


class CapabilityError(TicusumError):
    """An operation was requested that the model pair cannot support."""


class DomainError(TicusumError):
    """A density evaluation produced a non-finite value."""


class DegenerateWeightsError(TicusumError):
    """All self-normalized importance weights underflowed to zero."""


class DegenerateEstimateError(TicusumError):
    """A partition-function estimate collapsed to zero or overflowed."""


class EstimationError(TicusumError):
    """A Monte Carlo estimator could not produce a usable result."""


class CalibrationError(TicusumError):
    """Calibration could not produce a usable gamma; carries a suggestion."""

    def __init__(self, message, required_i=None):
        super().__init__(message)
        self.required_i = required_i


class ConfigError(TicusumError):
    """Config validation failed; carries every error found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in self.errors))
