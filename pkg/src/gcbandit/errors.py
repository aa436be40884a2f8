"""Exception types raised across the package."""


class GcbError(Exception):
    """Base class for package errors."""


class CycleDetected(GcbError, ValueError):
    pass


class ArityMismatch(GcbError, ValueError):
    pass


class ConstraintViolation(GcbError, ValueError):
    """Parameters fall outside the norm ball of their function class."""


class InvalidIntervention(GcbError, ValueError):
    pass


class AnalyticUnsupported(GcbError, ValueError):
    pass


class GridTooLarge(GcbError, ValueError):
    pass


class UnsupportedClass(GcbError, ValueError):
    pass


class NonFiniteLoss(GcbError, FloatingPointError):
    pass


class InvalidDelta(GcbError, ValueError):
    pass


class InvalidSlopes(GcbError, ValueError):
    pass


class DeltaMismatch(GcbError, ValueError):
    pass


class ConfigInvalid(GcbError, ValueError):
    """Raised with a dotted field path, e.g. ``scm.nodes.3.class``."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
