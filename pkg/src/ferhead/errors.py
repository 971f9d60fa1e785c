"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, range, emptiness)."""


class DataFormatError(ValueError):
    """A dataset or checkpoint file is malformed, truncated, or mismatched."""


class TrainingError(RuntimeError):
    """A non-finite loss or gradient was produced during training."""


class OracleError(RuntimeError):
    """A verification oracle could not be evaluated (non-finite probe value)."""
