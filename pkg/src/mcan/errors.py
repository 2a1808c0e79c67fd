"""Exception types shared across the package."""


class McanError(Exception):
    """Base class for all package errors."""


class ConfigError(McanError):
    """Invalid or inconsistent configuration (usage error)."""


class DataError(McanError):
    """Problem with dataset content or files."""


class SchemaError(DataError):
    """A dataset file violates its schema; message names the row/field."""


class MissingDataError(DataError):
    """Required data (series, history window, neighbor embedding) is absent."""


class ShapeMismatch(McanError):
    """Operands of a differentiable op have incompatible shapes."""


class TrainingDivergence(McanError):
    """Training produced a non-finite value; message names the tensor."""
