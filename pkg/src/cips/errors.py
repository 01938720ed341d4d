"""Exception hierarchy shared by every stage of the pipeline."""


class CipsError(Exception):
    """Base class for all package errors."""


class ShapeError(CipsError, ValueError):
    """Array or vector dimensions do not agree."""


class DomainError(CipsError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(CipsError, ArithmeticError):
    """A non-finite value appeared during a computation."""


class LoadError(CipsError):
    """A dataset, schema or model file could not be read."""


class SchemaError(LoadError):
    """A schema violates the variable-role invariants."""


class SplitError(CipsError, ValueError):
    pass


class ScalingError(CipsError, ValueError):
    pass


class ImputationError(CipsError):
    pass


class TrainingError(CipsError):
    pass


class ContractError(CipsError):
    """A model is used with data it was not trained for."""


class ConfigError(CipsError, ValueError):
    pass
