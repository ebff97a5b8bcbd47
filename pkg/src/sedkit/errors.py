"""Exception hierarchy shared by every sedkit module."""


class SedkitError(Exception):
    """Base class for all sedkit errors."""


class ShapeError(SedkitError, ValueError):
    """Array extents are incompatible with the requested operation."""


class ConfigError(SedkitError, ValueError):
    """A configuration value is outside its valid domain."""


class ContractError(SedkitError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(SedkitError, ValueError):
    """A file is well-formed but uses an unsupported encoding."""


class ParseError(SedkitError, ValueError):
    """A file or record could not be parsed."""


class DataError(SedkitError):
    """Input data is missing, inconsistent or unusable."""


class NumericalError(SedkitError, FloatingPointError):
    """A non-finite value appeared in a computation."""
