"""Exception types raised across the package."""


class CapaError(Exception):
    """Base class for all package errors."""


class SingularityError(CapaError):
    """Channel evaluated at (numerically) coincident points."""


class NumericalPSDError(CapaError):
    """A covariance matrix had an eigenvalue below the PSD tolerance."""


class DegenerateBeamformerError(CapaError):
    """A beamformer with zero transmit power cannot be normalized."""


class NumericalError(CapaError):
    """Non-finite values appeared during a computation."""


class ConfigError(CapaError):
    """Invalid or inconsistent run configuration."""


class CorruptCheckpointError(CapaError):
    """Checkpoint failed magic, version, shape or checksum validation."""
