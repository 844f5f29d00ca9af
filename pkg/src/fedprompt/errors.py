"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are inconsistent with the operation."""


class DataError(ValueError):
    """Values violate an invariant (non-finite entries, bad labels, ...)."""


class FormatError(ValueError):
    """A serialized artifact does not match its declared binary format."""


class ConfigError(ValueError):
    """An experiment or model configuration is invalid."""
