class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class UsageError(RuntimeError):
    """An API was called in a state that does not support it."""


class SpecError(ValueError):
    """A configuration or scene description is invalid."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""
