"""Exception types shared across the package."""


class OdeStreamError(Exception):
    pass


class DimensionError(OdeStreamError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(OdeStreamError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(OdeStreamError, ArithmeticError):
    """A computation produced non-finite values."""


class DataError(OdeStreamError, ValueError):
    """Input data is malformed or too short for the requested operation."""


class CheckpointError(OdeStreamError):
    """A checkpoint file is corrupt or unreadable."""


class ConfigMismatchError(CheckpointError):
    """A checkpoint was built for a different configuration."""
