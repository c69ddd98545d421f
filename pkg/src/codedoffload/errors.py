"""Exception hierarchy shared by every layer of the package."""


class CodedOffloadError(Exception):
    """Base class for all package errors."""


class ZeroInverse(CodedOffloadError, ZeroDivisionError):
    pass


class OutOfRange(CodedOffloadError, ValueError):
    pass


class ShapeMismatch(CodedOffloadError, ValueError):
    pass


class PrimeMismatch(CodedOffloadError, ValueError):
    pass


class Singular(CodedOffloadError, ArithmeticError):
    pass


class GenerationFailure(CodedOffloadError, RuntimeError):
    pass


class OverflowBudget(CodedOffloadError, OverflowError):
    pass


class TooLarge(CodedOffloadError, ValueError):
    pass


class PoolTooSmall(CodedOffloadError, ValueError):
    pass


class MissingCache(CodedOffloadError, KeyError):
    pass


class DuplicateShare(CodedOffloadError, RuntimeError):
    """A worker was handed a second share for the same (batch, layer)."""


class IntegrityViolation(CodedOffloadError, RuntimeError):
    """Redundant decodings of worker results disagree."""

    def __init__(self, message, batch_id=None, layer_id=None, stage=None):
        super().__init__(message)
        self.batch_id = batch_id
        self.layer_id = layer_id
        self.stage = stage


class ChecksumMismatch(CodedOffloadError, ValueError):
    pass


class MissingBatch(CodedOffloadError, KeyError):
    pass


class ConfigError(CodedOffloadError, ValueError):
    pass
