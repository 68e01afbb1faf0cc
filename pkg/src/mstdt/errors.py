"""Exception types shared across the package.

The CLI maps these to process exit codes: ConfigError -> 2,
NumericError -> 3, FormatError -> 4, anything else -> 1.
"""


class MstdtError(Exception):
    """Base class for all package errors."""


class ContractError(MstdtError):
    """An operation was called with arguments violating its contract."""


class ConfigError(MstdtError):
    """Invalid or inconsistent configuration."""


class NumericError(MstdtError):
    """NaN/Inf values or numerically ill-posed input."""


class FormatError(MstdtError):
    """Malformed or inconsistent on-disk data."""


class AllMaskedError(MstdtError):
    """Every entry along a reduction axis is masked out."""
