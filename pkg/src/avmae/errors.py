"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class CapacityError(ValueError):
    """A coordinate exceeds the extent of a lookup table."""


class NumericError(ValueError):
    """A value violated a numeric contract (NaN, probability outside (0,1), ...)."""


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


class IntegrityError(ValueError):
    """Stored data fails its checksum."""


class VersionError(ValueError):
    """A persisted artifact is incompatible with the current configuration."""
