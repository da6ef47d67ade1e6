"""Shared fixtures: synthetic datasets, trained models, acceptance bookkeeping.

The expensive fixtures (10-fold runs, the segmenter run) are session-scoped
and lazy, so unit-test-only invocations never pay for them.
"""

import time

import hypothesis
import numpy as np
import pytest

from boldts.core import ClassLabel, PadMode, VoxelTimeSeries, WholeTrialSample
from boldts.ingest import (
    detect_active_voxels,
    extract_whole_ts,
    shift_to_peak,
    split_by_class,
)
from boldts.models import (
    ClassifierConfig,
    RecVariant,
    SegmenterConfig,
    TrainConfig,
    kfold_cv,
    train_classifier,
    train_segmenter,
)
from boldts.preprocess import preprocess_series
from boldts.synth import SynthConfig, generate, make_schedules

hypothesis.settings.register_profile("suite", deadline=None)
hypothesis.settings.load_profile("suite")


def build_dataset(scfg: SynthConfig, threshold: float = 0.4):
    """synth -> detect -> peak shift -> extract -> preprocess -> split.

    Returns (segments, segment_groups, whole_trials, trial_groups) where
    groups are source trial ids, the unit of split integrity.
    """
    schedules = make_schedules(scfg)
    volumes, _ = generate(scfg, schedules)
    segments, seg_groups, trials, trial_groups = [], [], [], []
    for schedule, volume in zip(schedules, volumes):
        report = detect_active_voxels(volume, schedule, threshold)
        shifted = shift_to_peak(schedule, volume.tr_seconds, volume.nt)
        for coord in report.coords:
            ts = extract_whole_ts(volume, coord, shifted)
            values = preprocess_series(ts.samples)
            clean = VoxelTimeSeries(coord=coord, roi=ts.roi, samples=values)
            trials.append(WholeTrialSample(values=values, labels=shifted.labels))
            trial_groups.append(schedule.trial_id)
            for _, segment in sorted(split_by_class(clean, shifted).items()):
                segments.append(segment)
                seg_groups.append(schedule.trial_id)
    return segments, seg_groups, trials, trial_groups


# ---------------------------------------------------------------------------
# expensive shared runs


@pytest.fixture(scope="session")
def separable_data():
    t0 = time.time()
    segments, groups, trials, trial_groups = build_dataset(SynthConfig(seed=42))
    return {
        "segments": segments,
        "groups": groups,
        "trials": trials,
        "trial_groups": trial_groups,
        "seconds": time.time() - t0,
    }


@pytest.fixture(scope="session")
def kfold_zero(separable_data):
    t0 = time.time()
    result = kfold_cv(
        separable_data["segments"],
        separable_data["groups"],
        ClassifierConfig(variant=RecVariant.BILSTM),
        TrainConfig(max_epochs=15, patience=10, seed=7, pad_mode=PadMode.ZERO),
        k=10,
    )
    return result, time.time() - t0


@pytest.fixture(scope="session")
def kfold_repeat(separable_data):
    t0 = time.time()
    result = kfold_cv(
        separable_data["segments"],
        separable_data["groups"],
        ClassifierConfig(variant=RecVariant.BILSTM),
        TrainConfig(max_epochs=15, patience=10, seed=7, pad_mode=PadMode.REPEAT),
        k=10,
    )
    return result, time.time() - t0


@pytest.fixture(scope="session")
def kfold_null():
    """Equal class amplitudes: labels carry no signal, accuracy must sit at chance."""
    t0 = time.time()
    flat = {ClassLabel.COCO: 0.7, ClassLabel.IMAGENET: 0.7, ClassLabel.SUN: 0.7}
    segments, groups, _, _ = build_dataset(SynthConfig(seed=43, class_amplitudes=flat))
    result = kfold_cv(
        segments,
        groups,
        ClassifierConfig(variant=RecVariant.BILSTM),
        TrainConfig(max_epochs=15, patience=10, seed=7),
        k=10,
    )
    return result, time.time() - t0


@pytest.fixture(scope="session")
def single_split(separable_data):
    """One 8/1/1 split on the separable data, shared by the baseline comparison."""
    outcome = train_classifier(
        separable_data["segments"],
        ClassifierConfig(variant=RecVariant.BILSTM),
        TrainConfig(max_epochs=15, patience=10, seed=7),
        separable_data["groups"],
    )
    return outcome


@pytest.fixture(scope="session")
def segmentation_run():
    """Segmenter trained on many distinct schedules (few voxels each).

    With few distinct schedules the high-capacity stack memorizes label
    sequences instead of the per-timestep amplitude rule; 300 unique
    schedules with at most two voxel copies force the generalizing
    solution.
    """
    t0 = time.time()
    scfg = SynthConfig(
        seed=47, noise_sigma=0.05, n_trials=300, dims=(2, 2, 1), active_fraction=0.3
    )
    _, _, trials, trial_groups = build_dataset(scfg)
    outcome = train_segmenter(
        trials,
        SegmenterConfig(),
        TrainConfig(max_epochs=60, patience=15, seed=7),
        trial_groups,
    )
    return {
        "outcome": outcome,
        "trials": trials,
        "trial_groups": trial_groups,
        "seconds": time.time() - t0,
    }


# ---------------------------------------------------------------------------
# acceptance report: one line per criterion at the end of the run


def pytest_configure(config):
    config._criterion_results = {}


@pytest.fixture
def criteria(request):
    results = request.config._criterion_results

    def record(number: int, passed: bool, detail: str):
        results[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criterion_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[criterion {number}] {status} - {detail}")
