"""Exception hierarchy shared across the package."""


class PanoSlamError(Exception):
    """Base class for all errors raised by panoslam."""


class AmbiguousRotationError(PanoSlamError):
    """Rotation logarithm requested at (or numerically at) an angle of pi."""


class OutOfBoundsError(PanoSlamError):
    """A point falls outside the elevation range of a projection model."""


class MissingImuDataError(PanoSlamError):
    """The IMU stream does not cover the requested interval."""


class DegenerateGeometryError(PanoSlamError):
    """Registration lacks enough constraints to determine a pose.

    ``estimate`` carries the last valid pose estimate when one exists.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class IllConditionedError(DegenerateGeometryError):
    """Normal equations too poorly conditioned to solve.

    ``directions`` holds the unconstrained twist directions (one per row,
    ordered rotation then translation components).
    """

    def __init__(self, message, condition, directions, estimate=None):
        super().__init__(message, estimate)
        self.condition = condition
        self.directions = directions


class NumericalFailureError(PanoSlamError):
    """A solve produced non-finite values."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class IntegrityError(PanoSlamError):
    """A stored archive record failed validation."""


class LogParseError(PanoSlamError):
    """A binary or text log could not be parsed.

    ``offset`` is the byte offset (binary) or line number (text) of the
    failure.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset
