"""Exception hierarchy shared by every module."""


class DepMambaError(Exception):
    """Base class for all package errors."""


class DimensionError(DepMambaError, ValueError):
    pass


class ParameterError(DepMambaError, ValueError):
    pass


class ConfigError(DepMambaError, ValueError):
    pass


class StructureError(DepMambaError, ValueError):
    pass


class FormatError(DepMambaError, ValueError):
    pass


class DataError(DepMambaError, ValueError):
    pass


class CheckpointError(DepMambaError):
    pass


class InferenceError(DepMambaError, ArithmeticError):
    pass


class TrainingAbort(DepMambaError, RuntimeError):
    pass
