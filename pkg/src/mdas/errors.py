"""Exception hierarchy shared across the package."""


class MdasError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MdasError, ValueError):
    """A config object violates its invariants (bad dims, bad grid, ...)."""


class ContractError(MdasError, ValueError):
    """A precondition was violated by the caller."""


class LengthError(ContractError):
    """A layout or transcript does not fit the model's position budget."""


class CheckpointFormatError(MdasError, RuntimeError):
    """Checkpoint file has wrong magic bytes or an unsupported version."""


class CheckpointCorruptError(MdasError, RuntimeError):
    """Checkpoint file is truncated or otherwise unreadable."""


class CheckpointConfigMismatch(MdasError, RuntimeError):
    """Checkpoint config disagrees with the config requested by the caller."""


class TrainingError(MdasError, RuntimeError):
    """Non-finite loss or gradients; message names the offending tensor."""


class EmptyMaskRedraw(MdasError):
    """Masking selected zero supervisable positions; caller must redraw.

    This is a control-flow signal, not a loss of zero: the masked-position
    expectation has no term for an empty set.
    """


class SweepError(MdasError, RuntimeError):
    """A sweep spec references missing inputs; message names the entry."""
