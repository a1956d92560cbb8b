"""Exception hierarchy shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ShapeError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class NonFiniteError(ContractError, FloatingPointError):
    """A forward computation produced NaN or infinity."""


class EmptySequenceError(ContractError):
    """Tokenization reduced the input to zero tokens."""


class LengthError(ContractError):
    """A sequence exceeds the configured maximum length."""


class FormatError(ContractError):
    """A file on disk does not match the expected format."""


class DivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, batch_index: int, message: str = ""):
        self.batch_index = batch_index
        super().__init__(message or f"training diverged at batch {batch_index}")
