"""Exception types shared across the toolkit.

Every failure raised on purpose derives from :class:`RawnightError` so
callers (and the command-line front end) can catch one base class and
render structured diagnostics.
"""


class RawnightError(Exception):
    """Base class for all toolkit errors."""


class CalibrationError(RawnightError):
    """Sensor calibration is invalid (non-positive gain, bad black level, ...)."""


class ThinningSpecError(RawnightError):
    """Thinning parameters are out of range or physically impossible."""


class FitError(RawnightError):
    """Noise-model fit cannot proceed (too few levels, degenerate input)."""


class GeometryError(RawnightError):
    """Bounding box lies outside the raster or has non-positive extent."""


class PartitionError(RawnightError):
    """Equal-count partitioning is impossible for the given inputs."""


class PairingError(RawnightError):
    """Area-matched pairing received an empty instance set."""


class DomainError(RawnightError):
    """Numeric argument outside the documented domain."""


class JobError(RawnightError):
    """Augmentation job list construction or execution failed."""


class EvalInputError(RawnightError):
    """Detections or ground truth violate the evaluation contract."""


class ContainerError(RawnightError):
    """Raster container file is corrupt or structurally invalid."""


class ConfigError(RawnightError):
    """Run configuration is missing, inconsistent, or references unknown keys."""
