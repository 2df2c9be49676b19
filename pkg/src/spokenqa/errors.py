"""Error types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or ranks."""


class LengthError(ValueError):
    """A sequence exceeds the length the component was configured for."""


class BoundsError(IndexError):
    """An id or index lies outside its valid range."""


class ParameterError(ValueError):
    """A configuration or call parameter is outside its documented domain."""


class ContractError(RuntimeError):
    """A runtime precondition or postcondition was violated."""


class DataError(ValueError):
    """A dataset record is malformed or cannot be processed."""


class ConfigError(ValueError):
    """Run configuration is inconsistent or refers to mismatched artifacts."""
