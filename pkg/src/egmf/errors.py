"""Exception hierarchy shared across the package."""


class EgmfError(Exception):
    """Base class for all package errors."""


class ShapeError(EgmfError):
    """Operand shapes are incompatible; message carries both shapes."""


class FiniteValueError(EgmfError):
    """A value that must be finite is NaN or infinite."""


class ContractError(EgmfError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class GraphConsumedError(ContractError):
    """backward() was called twice on the same recorded graph."""


class ConfigError(EgmfError):
    """Invalid or inconsistent configuration."""


class VocabularyError(EgmfError):
    """Token id or token string outside the vocabulary."""


class SequenceLengthError(EgmfError):
    """A wrapped input exceeds the model's maximum sequence length."""


class DataError(EgmfError):
    """Malformed dataset record, manifest, or out-of-range target."""


class CheckpointError(EgmfError):
    """Unreadable, corrupt, or mismatched checkpoint file."""
