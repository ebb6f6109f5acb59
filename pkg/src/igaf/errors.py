"""Exception hierarchy shared by every layer of the engine."""


class IGAFError(Exception):
    """Base class for all engine errors."""


class ShapeError(IGAFError, ValueError):
    """Operands have incompatible shapes."""


class TapeError(IGAFError, RuntimeError):
    """Misuse of the gradient tape (stale tape, non-scalar loss, ...)."""


class NumericalError(IGAFError, ArithmeticError):
    """A NaN/Inf escaped, or a gradient check failed."""


class ConfigError(IGAFError, ValueError):
    """Invalid or mismatched configuration."""


class DataError(IGAFError, OSError):
    """A data file is missing, unreadable or inconsistent."""


class CheckpointError(IGAFError):
    """A checkpoint is missing tensors, has the wrong version or config."""
