"""Exception types raised across the package.

All inherit from :class:`AsnormError` so callers can catch broadly; most are
also ``ValueError`` subclasses because they signal bad inputs rather than
internal faults.
"""


class AsnormError(Exception):
    """Base class for all package errors."""


class ConfigError(AsnormError, ValueError):
    """Invalid configuration value or mismatched input shapes."""


class InvalidCenterError(AsnormError, ValueError):
    """Patch extraction requested around an invalid pixel."""


class DegeneratePatchError(AsnormError, ValueError):
    """Patch too small to support the requested operation."""


class DegenerateTripletError(AsnormError, ValueError):
    """Three points are colinear; no plane normal exists."""


class InsufficientSupportError(AsnormError, ValueError):
    """Required neighbour pixels are invalid or out of bounds."""


class UnrecoverablePixelError(AsnormError, ValueError):
    """No usable normal candidate survived sampling for a pixel."""


class ZeroWeightError(AsnormError, ValueError):
    """Combination weights sum below the numeric floor."""


class ZeroMeanError(AsnormError, ValueError):
    """Candidate normals cancel; the mean has no direction."""


class NoOverlapError(AsnormError, ValueError):
    """Prediction and ground truth share no valid pixels."""


class DomainError(AsnormError, ValueError):
    """Values outside the mathematical domain (e.g. log of a non-positive)."""


class OutOfRangeError(AsnormError, ValueError):
    """Derived quantity falls outside its admissible range."""


class GradientError(AsnormError, ArithmeticError):
    """A computed gradient is non-finite."""


class PfmError(AsnormError, ValueError):
    """Malformed PFM header or payload."""


class IntrinsicsError(AsnormError, ValueError):
    """Malformed or incomplete intrinsics document."""
