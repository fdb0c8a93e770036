"""Exception taxonomy shared across the package.

Each class maps to one failure category so callers (and the CLI exit-code
mapping) can tell configuration mistakes from runtime faults.
"""


class KvseqError(Exception):
    """Base class for all package errors."""


class ConfigError(KvseqError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(KvseqError, ValueError):
    """Tensor dimension mismatch; message names both shapes."""


class ContractError(KvseqError, ValueError):
    """An operation was called outside its documented contract."""


class NumericError(KvseqError, ArithmeticError):
    """NaN/Inf encountered where finite values are required; names the op."""


class MaskingError(KvseqError, ValueError):
    """Attention mask forbids every key for some query row."""


class LengthError(KvseqError, ValueError):
    """Token sequence exceeds the maximum admitted positions."""

    def __init__(self, length: int, max_len: int, message: str | None = None):
        self.length = length
        self.max_len = max_len
        super().__init__(message or f"sequence length {length} exceeds max_len {max_len}")


class IndexRangeError(KvseqError, IndexError):
    """An id/target index falls outside the valid range; names the index."""


class KeyLookupError(KvseqError, KeyError):
    """Requested key is not part of the sequence's key universe."""


class FormatError(KvseqError, ValueError):
    """Malformed input data; message carries the line number where known."""
