"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class FaultError(RuntimeError):
    """Base class for runtime simulation faults."""


class SingularAttitudeError(FaultError):
    """Pitch approached +-pi/2; the Euler-angle Jacobian is singular."""


class GuidanceSingularityError(FaultError):
    """Horizontal range underflowed; the guidance field is undefined."""


class InfeasibleHoverError(ConfigError):
    """Hover input does not fit strictly inside the input box."""


class ModelFormatError(ValueError):
    """Model file is malformed, truncated, or has the wrong version."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
