"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ParameterError(ValueError):
    """A hyperparameter or generator parameter is out of range."""


class StateError(RuntimeError):
    """An operation was invoked on an object in the wrong state."""


class InputError(ValueError):
    """User-supplied data is invalid or insufficient."""


class SequencingError(RuntimeError):
    """A pipeline stage was invoked out of order."""


class NumericError(RuntimeError):
    """A non-finite value appeared during computation."""


class ConfigError(ValueError):
    """A run configuration or checkpoint is invalid or inconsistent."""
