"""Synthetic 4-D BOLD generation with class-dependent responses.

Every downstream stage is exercised against volumes produced here: active
voxels carry a superposition of hemodynamic responses whose amplitude
depends on the stimulus class, on top of linear drift and AR(1) noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    TRIAL_LENGTH,
    BoldVolume4D,
    ClassLabel,
    PipelineError,
    ScheduleEntry,
    StimulusSchedule,
    derive_seed,
    validate_schedule,
)

DEFAULT_AMPLITUDES = {ClassLabel.COCO: 1.0, ClassLabel.IMAGENET: 0.7, ClassLabel.SUN: 0.3}

# Stimulus onsets every 5 TRs after a short lead-in; the tail leaves room
# for the response of the last stimulus to rise and decay.
DEFAULT_SPACING_TR = 5
DEFAULT_LEAD_IN_TR = 2
DEFAULT_TAIL_TR = 25


def _double_gamma(t: np.ndarray) -> np.ndarray:
    """Unnormalized double-gamma impulse response g(t;6,1) - g(t;16,1)/6."""
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    peak = tp ** 5 * np.exp(-tp) / math.gamma(6.0)
    undershoot = tp ** 15 * np.exp(-tp) / math.gamma(16.0)
    out[pos] = peak - undershoot / 6.0
    return out


def _find_peak() -> tuple[float, float]:
    # coarse grid then golden-section refinement
    grid = np.arange(0.0, 30.0, 0.01)
    t0 = float(grid[np.argmax(_double_gamma(grid))])
    lo, hi = t0 - 0.02, t0 + 0.02
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    for _ in range(120):
        c = hi - ratio * (hi - lo)
        d = lo + ratio * (hi - lo)
        if _double_gamma(np.array([c]))[0] > _double_gamma(np.array([d]))[0]:
            hi = d
        else:
            lo = c
    peak_t = (lo + hi) / 2.0
    return peak_t, float(_double_gamma(np.array([peak_t]))[0])


HRF_PEAK_SECONDS, _HRF_PEAK_VALUE = _find_peak()


def canonical_hrf(t):
    """Canonical hemodynamic response at time t seconds (scalar or array).

    Double-gamma shape scaled to unit peak, so a stimulus of amplitude a
    produces a response peaking at a. Raises NEGATIVE_TIME for t < 0.
    """
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0):
        raise PipelineError("NEGATIVE_TIME", "hrf is only defined for t >= 0")
    out = _double_gamma(arr) / _HRF_PEAK_VALUE
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


@dataclass
class SynthConfig:
    """Knobs for one synthetic acquisition run."""

    dims: tuple[int, int, int] = (5, 5, 4)
    n_trials: int = 20
    tr_seconds: float = 1.0
    class_amplitudes: dict[ClassLabel, float] | None = None
    noise_sigma: float = 0.2
    ar1_rho: float = 0.3
    active_fraction: float = 0.1
    drift_slope: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise PipelineError("BAD_CONFIG", f"dims must be 3 positive integers, got {self.dims}")
        if self.n_trials < 1:
            raise PipelineError("BAD_CONFIG", "n_trials must be >= 1")
        if not self.tr_seconds > 0:
            raise PipelineError("BAD_CONFIG", "tr_seconds must be > 0")
        if self.class_amplitudes is None:
            self.class_amplitudes = dict(DEFAULT_AMPLITUDES)
        self.class_amplitudes = {ClassLabel(k): float(v) for k, v in self.class_amplitudes.items()}
        if set(self.class_amplitudes) != set(ClassLabel):
            raise PipelineError("BAD_CONFIG", "class_amplitudes must cover all three classes")
        if not all(math.isfinite(v) for v in self.class_amplitudes.values()):
            raise PipelineError("BAD_CONFIG", "class_amplitudes must be finite")
        if self.noise_sigma < 0:
            raise PipelineError("BAD_CONFIG", "noise_sigma must be >= 0")
        if not 0 <= self.ar1_rho < 1:
            raise PipelineError("BAD_CONFIG", "ar1_rho must lie in [0, 1)")
        if not 0 < self.active_fraction <= 1:
            raise PipelineError("BAD_CONFIG", "active_fraction must lie in (0, 1]")

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


def trial_nt(spacing_tr: int = DEFAULT_SPACING_TR, lead_in_tr: int = DEFAULT_LEAD_IN_TR,
             tail_tr: int = DEFAULT_TAIL_TR) -> int:
    return lead_in_tr + spacing_tr * (TRIAL_LENGTH - 1) + 1 + tail_tr


def make_schedules(cfg: SynthConfig, spacing_tr: int = DEFAULT_SPACING_TR,
                   lead_in_tr: int = DEFAULT_LEAD_IN_TR) -> list[StimulusSchedule]:
    """Build one randomized presentation schedule per trial.

    Onsets are evenly spaced; the class sequence is a seeded shuffle that is
    guaranteed to contain every class at least once.
    """
    schedules = []
    for trial_id in range(cfg.n_trials):
        rng = np.random.default_rng(derive_seed(cfg.seed, "schedule", trial_id))
        labels = [ClassLabel.COCO, ClassLabel.IMAGENET, ClassLabel.SUN]
        labels += [ClassLabel(int(v)) for v in rng.integers(1, 4, size=TRIAL_LENGTH - 3)]
        order = rng.permutation(TRIAL_LENGTH)
        entries = tuple(
            ScheduleEntry(
                timestamp=lead_in_tr + i * spacing_tr,
                stimulus_id=trial_id * TRIAL_LENGTH + i,
                label=labels[order[i]],
            )
            for i in range(TRIAL_LENGTH)
        )
        schedules.append(StimulusSchedule(trial_id=trial_id, entries=entries))
    return schedules


def choose_active_voxels(cfg: SynthConfig) -> tuple[tuple[int, int, int], ...]:
    """Deterministic pseudo-random active set, shared by all trials."""
    n_active = math.ceil(cfg.active_fraction * cfg.n_voxels)
    rng = np.random.default_rng(derive_seed(cfg.seed, "active"))
    flat = rng.choice(cfg.n_voxels, size=n_active, replace=False)
    nx, ny, _ = cfg.dims
    coords = sorted((int(f % nx), int(f // nx % ny), int(f // (nx * ny))) for f in flat)
    return tuple(coords)


def _noiseless_signal(cfg: SynthConfig, schedule: StimulusSchedule, nt: int) -> np.ndarray:
    """Superposed class-scaled responses sampled on the TR grid, length nt."""
    t = np.arange(nt, dtype=np.float64) * cfg.tr_seconds
    signal = np.zeros(nt)
    for entry in schedule.entries:
        onset = entry.timestamp * cfg.tr_seconds
        after = t >= onset
        signal[after] += cfg.class_amplitudes[entry.label] * canonical_hrf(t[after] - onset)
    return signal


def _ar1_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float,
               rho: float) -> np.ndarray:
    innovations = rng.standard_normal(shape) * sigma
    noise = np.empty(shape)
    noise[:, 0] = innovations[:, 0]
    for n in range(1, shape[1]):
        noise[:, n] = rho * noise[:, n - 1] + innovations[:, n]
    return noise


def generate(
    cfg: SynthConfig,
    schedules: list[StimulusSchedule],
    nt: int | None = None,
) -> tuple[list[BoldVolume4D], tuple[tuple[int, int, int], ...]]:
    """Generate one volume per schedule plus the ground-truth active set.

    Active voxels carry signal + drift + AR(1) noise, inactive ones drift +
    noise only. Fully deterministic given cfg.seed; each trial draws from
    its own (seed, trial_id) stream so trials could be produced in any order.
    """
    if nt is None:
        nt = trial_nt()
    active = choose_active_voxels(cfg)
    nx, ny, nz = cfg.dims
    active_flat = np.array([x + nx * (y + ny * z) for x, y, z in active], dtype=np.intp)
    t = np.arange(nt, dtype=np.float64) * cfg.tr_seconds

    volumes = []
    for schedule in schedules:
        validate_schedule(schedule, nt)
        signal = _noiseless_signal(cfg, schedule, nt)
        rng = np.random.default_rng(derive_seed(cfg.seed, "noise", schedule.trial_id))
        data = np.tile(cfg.drift_slope * t, (cfg.n_voxels, 1))
        if cfg.noise_sigma > 0:
            data += _ar1_noise(rng, (cfg.n_voxels, nt), cfg.noise_sigma, cfg.ar1_rho)
        data[active_flat] += signal
        grid = data.reshape(nz, ny, nx, nt).transpose(2, 1, 0, 3)  # flat index was x-fastest
        volumes.append(
            BoldVolume4D(dims=(nx, ny, nz, nt), tr_seconds=cfg.tr_seconds, data=grid)
        )
    return volumes, active
