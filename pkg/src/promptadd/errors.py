"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands fed to a graph op have incompatible shapes."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf from finite inputs."""


class ConfigError(ValueError):
    """A configuration object failed validation."""


class DataFormatError(ValueError):
    """Base class for serialized-file problems."""


class CorruptHeaderError(DataFormatError):
    """File does not start with the expected magic/header."""


class TruncatedPayloadError(DataFormatError):
    """File ends before the declared payload is complete."""


class VersionMismatchError(DataFormatError):
    """File declares a format version this build does not read."""


class TrainingDivergenceError(RuntimeError):
    """Optimization hit a non-finite loss or gradient."""


class SearchFailedError(RuntimeError):
    """Every trial of a hyperparameter search failed."""
