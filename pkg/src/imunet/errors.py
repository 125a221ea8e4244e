"""Exception hierarchy shared by all imunet modules."""


class ImunetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ImunetError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(ImunetError, ValueError):
    """A documented precondition was violated."""


class ValidationError(ImunetError, ValueError):
    """Input data failed validation (ordering, finiteness, ...)."""


class ConfigurationError(ImunetError, ValueError):
    """Inconsistent or unsupported configuration."""


class TrainingDivergedError(ImunetError, RuntimeError):
    """Loss became non-finite during training."""


class CheckpointError(ImunetError):
    """Base class for checkpoint (de)serialization failures."""


class CorruptHeaderError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    """Checkpoint contents do not fit the architecture it names."""
