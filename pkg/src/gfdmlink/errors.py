"""Exception hierarchy shared across the package."""


class GfdmLinkError(Exception):
    """Base class for all errors raised by gfdmlink."""


class ConfigurationError(GfdmLinkError):
    """Invalid or inconsistent system/campaign configuration."""


class FeasibilityError(ConfigurationError):
    """Configuration cannot support the estimator (too few receive antennas)."""


class InputError(GfdmLinkError):
    """Runtime input with wrong shape, length or range."""


class NumericalError(GfdmLinkError):
    """A numerical step (eigensolve, inversion) failed or degenerated."""


class SingularOperatorError(NumericalError):
    """A mixing operator is rank deficient; usually signals an invalid pilot plan."""


class DetectionError(NumericalError):
    """Symbol detection failed for the current frame."""
