"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class MmstError(Exception):
    """Base class for all package errors."""


class DimensionError(MmstError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(MmstError):
    """An API precondition was violated by the caller."""


class DegenerateBatchError(ContractError):
    """Batch statistics were requested on a batch too small to provide them."""


class InsufficientHistoryError(ContractError):
    """A pose sequence is too short for the requested feature window."""


class ConfigError(MmstError):
    """Invalid or unknown configuration content."""


class DataError(MmstError):
    """Scene files, caches or checkpoints are missing, malformed or corrupt."""


class GenerationError(DataError):
    """A synthetic-scene spec cannot be realized within kinematic limits."""


class NumericError(MmstError):
    """A computation produced non-finite values."""
