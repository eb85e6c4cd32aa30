"""Exception types shared across the simulator."""


class BlcsError(Exception):
    """Base class for all simulator errors."""


class InvalidInput(BlcsError, ValueError):
    pass


class UnknownEntity(BlcsError, KeyError):
    pass


class NoRelations(BlcsError):
    """Raised when a lookup hits an empty relation memory."""


class Inconsistent(BlcsError):
    """Partial spectrum information admits no constraint-consistent completion."""


class InsufficientDisclosure(BlcsError):
    pass


class PrivacyViolation(BlcsError):
    pass


class LeaderQuarantined(BlcsError):
    pass


class ConfigError(BlcsError, ValueError):
    """Bad scenario/topology configuration. ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DegenerateDataset(UserWarning):
    """Training data holds a single label class."""
