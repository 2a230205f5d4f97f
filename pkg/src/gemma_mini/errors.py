"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration values."""


class MaskError(ValueError):
    """An attention mask leaves a query row with nothing to attend to."""


class CapacityError(RuntimeError):
    """A sequence or cache exceeded its configured capacity."""


class OrderingError(RuntimeError):
    """Cache appends arrived out of position order."""


class ChatFormatError(ValueError):
    """Chat turns violate the user/model alternation contract."""
