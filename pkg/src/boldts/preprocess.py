"""Detrending, z-scoring, and padding of extracted series.

The pipeline order is detrend -> zscore on the whole series, then split by
class, then pad the segments; padding last keeps the artificial fill values
out of the normalization statistics.
"""

from __future__ import annotations

import numpy as np

from .core import TRIAL_LENGTH, PadMode, PipelineError

DEGENERATE_SD = 1e-12


def detrend_linear(x) -> np.ndarray:
    """Remove the least-squares line fit over index positions 0..n-1."""
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < 2:
        raise PipelineError("TOO_SHORT", f"detrend needs at least 2 samples, got {n}")
    idx = np.arange(n, dtype=np.float64)
    idx_c = idx - idx.mean()
    slope = (idx_c @ (arr - arr.mean())) / (idx_c @ idx_c)
    return arr - (arr.mean() + slope * idx_c)


def zscore(x) -> np.ndarray:
    """Normalize to mean 0 and population (1/n) standard deviation 1."""
    arr = np.asarray(x, dtype=np.float64)
    sd = float(arr.std())
    if sd < DEGENERATE_SD:
        raise PipelineError("DEGENERATE_SERIES", f"population sd {sd:g} below {DEGENERATE_SD:g}")
    return (arr - arr.mean()) / sd


def pad_to(x, target: int = TRIAL_LENGTH, mode: PadMode = PadMode.ZERO) -> np.ndarray:
    """Pad to the target length by zero fill or cyclic repetition."""
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n == 0:
        raise PipelineError("EMPTY", "cannot pad an empty series")
    if n > target:
        raise PipelineError("TOO_LONG", f"series length {n} exceeds target {target}")
    if mode == PadMode.ZERO:
        return np.concatenate([arr, np.zeros(target - n)])
    reps = np.tile(arr, -(-target // n))
    return reps[:target]


def preprocess_series(x) -> np.ndarray:
    """Detrend then z-score; the standard whole-series normalization."""
    return zscore(detrend_linear(x))
