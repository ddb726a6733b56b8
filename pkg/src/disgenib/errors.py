"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError/ContractError/ShapeError -> 2,
I/O and file-format failures -> 3, NumericError -> 4.
"""


class DisgenibError(Exception):
    """Base class for all package errors."""


class ShapeError(DisgenibError):
    """Operand shapes do not conform to an operation's rule."""


class NumericError(DisgenibError):
    """A value became NaN/Inf, or a numeric abort was triggered."""


class ContractError(DisgenibError):
    """A documented precondition was violated by the caller."""


class ConfigError(DisgenibError):
    """Invalid configuration (unknown key, bad value, missing section)."""


class FormatError(DisgenibError):
    """A binary file failed validation (bad magic, truncation, offsets)."""


class ParseError(DisgenibError):
    """A text input (CSV) could not be parsed."""
