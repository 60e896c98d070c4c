"""Exception hierarchy shared across the package."""


class MHELabError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(MHELabError, ValueError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Shapes of operands are incompatible."""


class NumericInputError(MHELabError, ArithmeticError):
    """NaN or infinite values where finite numbers are required."""


class ConfigError(ContractError):
    """Model or training configuration violates an invariant."""


class DomainError(MHELabError, ArithmeticError):
    """A metric is undefined for the given arguments."""


class TrainingDivergedError(MHELabError, RuntimeError):
    """Loss became non-finite during training."""


class CheckpointError(MHELabError):
    """Base class for checkpoint read/write failures."""


class CheckpointFormatError(CheckpointError):
    """File does not start with the expected magic bytes or has a malformed header."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared payload."""


class CheckpointShapeError(CheckpointError):
    """Stored tensor shapes do not match the configuration."""
