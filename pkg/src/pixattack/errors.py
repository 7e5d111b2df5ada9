"""Exception types shared across the toolkit."""


class PixattackError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PixattackError):
    """Operand shapes or ranks are incompatible with an operation."""


class DomainError(PixattackError):
    """Values lie outside an operation's mathematical domain."""


class GraphError(PixattackError):
    """Misuse of a computation graph, e.g. backward on a consumed graph."""


class ConfigError(PixattackError):
    """A configuration value is missing, malformed, or out of range."""


class NumericsError(PixattackError):
    """A computation produced non-finite values where finite ones are required."""


class TrainingError(PixattackError):
    """Training diverged or was asked to do something impossible."""


class FormatError(PixattackError):
    """A file does not conform to its on-disk format."""
