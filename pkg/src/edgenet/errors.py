"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the operation."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class DataError(ValueError):
    """Input data (files, manifests, ground truth) is malformed."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or does not match the network."""


class ContractError(RuntimeError):
    """An API was called outside its contract (wrong arity, non-scalar loss, ...)."""
