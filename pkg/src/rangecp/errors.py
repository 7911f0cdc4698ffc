"""Exception types raised across the package."""


class RangeCPError(Exception):
    """Base class for all package errors."""


class ZeroRelativeSpeed(RangeCPError):
    pass


class NoCollision(RangeCPError):
    pass


class DegenerateGeometry(RangeCPError):
    pass


class NonIdentifiable(RangeCPError):
    pass


class NonApproaching(RangeCPError):
    """Quadratic fit has a non-positive leading coefficient."""


class InsufficientData(RangeCPError):
    pass


class SingularGeometry(RangeCPError):
    pass


class NoFeasibleRoot(RangeCPError):
    """No non-negative real reference distance solves the TDOA system."""


class MissingStamp(RangeCPError):
    pass


class ConfigError(RangeCPError):
    pass


class DivergenceDetected(RangeCPError):
    """Majorization step increased the cost; indicates a bug."""


class NoEvents(RangeCPError):
    pass
