"""Synthetic BOLD time-series pipeline: generation, extraction, recurrent
classification, per-timestamp segmentation, and evaluation artifacts."""

from .core import (
    TRIAL_LENGTH,
    BoldVolume4D,
    ClassLabel,
    PadMode,
    PipelineError,
    ScheduleEntry,
    SegmentSample,
    StimulusSchedule,
    VoxelTimeSeries,
    WholeTrialSample,
    derive_seed,
)
from .synth import HRF_PEAK_SECONDS, SynthConfig, canonical_hrf, generate, make_schedules

__version__ = "0.1.0"

__all__ = [
    "TRIAL_LENGTH",
    "BoldVolume4D",
    "ClassLabel",
    "PadMode",
    "PipelineError",
    "ScheduleEntry",
    "SegmentSample",
    "StimulusSchedule",
    "VoxelTimeSeries",
    "WholeTrialSample",
    "derive_seed",
    "HRF_PEAK_SECONDS",
    "SynthConfig",
    "canonical_hrf",
    "generate",
    "make_schedules",
    "__version__",
]
