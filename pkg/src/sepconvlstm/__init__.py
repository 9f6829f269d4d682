"""Separable convolutional LSTM cells, FLOP accounting and flicker metrics."""

from .cells import (
    CellConfig,
    CellState,
    CellVariant,
    CellWeights,
    backward,
    forward,
    forward_cached,
    param_count,
    rollout,
)
from .errors import DimensionError, SpecError, TrainingDivergedError, UsageError
from .flops import FlopReport, analytic_flops, measured_flops
from .metrics import SegSequence, mfip, mfp, miou, pixel_accuracy

__version__ = "0.1.0"
