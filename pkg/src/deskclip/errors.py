"""Shared exception types used across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but numerically degenerate (e.g. zero norm)."""


class ConfigError(ValueError):
    """A configuration value violates its documented invariant."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or inconsistent with the model."""


class ManifestError(ValueError):
    """A dataset manifest could not be read or parsed."""


class TrainingAborted(RuntimeError):
    """Training stopped early because of a non-finite loss or gradient."""
