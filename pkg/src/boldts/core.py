"""Domain types shared by the whole pipeline.

All containers are immutable after construction (frozen dataclasses with
read-only numpy buffers), so they can be shared across threads freely.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

TRIAL_LENGTH = 37  # stimuli shown per trial


class PipelineError(Exception):
    """Error with a stable machine-readable code.

    Codes starting with ``IO_`` map to exit code 2 at the CLI, everything
    else to exit code 1.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ClassLabel(IntEnum):
    """Image-source class of a stimulus. Integer codes are part of the wire format."""

    COCO = 1
    IMAGENET = 2
    SUN = 3


class RoiTag(Enum):
    """Visual region-of-interest tag; OTHER is the catch-all."""

    PPA = "PPA"
    RSC = "RSC"
    OPA = "OPA"
    EV = "EV"
    LOC = "LOC"
    OTHER = "OTHER"


class PadMode(Enum):
    ZERO = "zero"
    REPEAT = "repeat"


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def derive_seed(seed: int, *tokens) -> int:
    """Derive a 64-bit sub-seed from a root seed and a token path.

    Stable across platforms and runs: hashes the canonical string encoding
    of (seed, *tokens) with blake2b.
    """
    text = "\x1f".join(str(t) for t in (seed, *tokens))
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class ScheduleEntry:
    """One stimulus presentation: sample index, stimulus id, class label."""

    timestamp: int
    stimulus_id: int
    label: ClassLabel


@dataclass(frozen=True)
class StimulusSchedule:
    """Ordered presentation list for one trial (exactly TRIAL_LENGTH entries)."""

    trial_id: int
    entries: tuple[ScheduleEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def timestamps(self) -> tuple[int, ...]:
        return tuple(e.timestamp for e in self.entries)

    @property
    def labels(self) -> tuple[ClassLabel, ...]:
        return tuple(e.label for e in self.entries)

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "entries": [[e.timestamp, e.stimulus_id, int(e.label)] for e in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StimulusSchedule":
        entries = tuple(
            ScheduleEntry(int(t), int(s), ClassLabel(int(l))) for t, s, l in obj["entries"]
        )
        return cls(trial_id=int(obj["trial_id"]), entries=entries)


def validate_schedule(schedule: StimulusSchedule, nt: int) -> None:
    """Check all schedule invariants against a volume of nt time samples.

    Raises PipelineError with code SCHEDULE_LENGTH, SCHEDULE_ORDER,
    SCHEDULE_RANGE, or SCHEDULE_MISSING_CLASS.
    """
    entries = schedule.entries
    if len(entries) != TRIAL_LENGTH:
        raise PipelineError(
            "SCHEDULE_LENGTH",
            f"trial {schedule.trial_id}: expected {TRIAL_LENGTH} entries, got {len(entries)}",
        )
    ts = [e.timestamp for e in entries]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise PipelineError(
            "SCHEDULE_ORDER", f"trial {schedule.trial_id}: timestamps not strictly increasing"
        )
    if ts[0] < 0 or ts[-1] >= nt:
        raise PipelineError(
            "SCHEDULE_RANGE",
            f"trial {schedule.trial_id}: timestamps must lie in [0, {nt}), got [{ts[0]}, {ts[-1]}]",
        )
    present = {e.label for e in entries}
    missing = set(ClassLabel) - present
    if missing:
        names = ", ".join(sorted(m.name for m in missing))
        raise PipelineError(
            "SCHEDULE_MISSING_CLASS", f"trial {schedule.trial_id}: no entries for {names}"
        )


@dataclass(frozen=True)
class BoldVolume4D:
    """One trial's 4-D scan.

    data has shape (nx, ny, nz, nt) and dtype float32 so that the vol4d
    file round-trip is bit-exact. The canonical flat layout is x-fastest.
    """

    dims: tuple[int, int, int, int]
    tr_seconds: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or any(d <= 0 for d in dims):
            raise PipelineError("DIM_MISMATCH", f"dims must be 4 positive integers, got {dims}")
        if not self.tr_seconds > 0:
            raise PipelineError("BAD_TR", f"tr_seconds must be > 0, got {self.tr_seconds}")
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.shape != dims:
            if arr.size != int(np.prod(dims)):
                raise PipelineError(
                    "DIM_MISMATCH", f"data has {arr.size} samples, dims imply {np.prod(dims)}"
                )
            arr = arr.reshape(dims[::-1]).transpose(3, 2, 1, 0)  # from x-fastest flat
        if not np.all(np.isfinite(arr)):
            raise PipelineError("NON_FINITE", "volume contains non-finite intensities")
        arr = arr.copy()  # never alias caller-owned memory
        arr.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "tr_seconds", float(self.tr_seconds))
        object.__setattr__(self, "data", arr)

    @property
    def nt(self) -> int:
        return self.dims[3]

    def voxel_ts(self, x: int, y: int, z: int) -> np.ndarray:
        nx, ny, nz, _ = self.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise PipelineError(
                "COORD_OUT_OF_RANGE", f"({x},{y},{z}) outside grid {self.dims[:3]}"
            )
        return np.asarray(self.data[x, y, z, :], dtype=np.float64)

    def flat_x_fastest(self) -> np.ndarray:
        """Flat float32 view in the canonical x-fastest, t-slowest order."""
        return self.data.transpose(3, 2, 1, 0).ravel()


@dataclass(frozen=True)
class VoxelTimeSeries:
    """One voxel's per-stimulus samples in schedule order."""

    coord: tuple[int, int, int]
    roi: RoiTag
    samples: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.samples, np.float64)
        if not np.all(np.isfinite(arr)):
            raise PipelineError("NON_FINITE", "voxel time series contains non-finite samples")
        object.__setattr__(self, "coord", tuple(int(c) for c in self.coord))
        object.__setattr__(self, "samples", arr)

    def to_json(self) -> dict:
        return {
            "coord": list(self.coord),
            "roi": self.roi.value,
            "samples": [float(v) for v in self.samples],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VoxelTimeSeries":
        return cls(tuple(obj["coord"]), RoiTag(obj["roi"]), np.array(obj["samples"]))


@dataclass(frozen=True)
class SegmentSample:
    """A class-specific sub-series plus (optionally) its padded length-37 form."""

    label: ClassLabel
    raw: np.ndarray
    padded: np.ndarray | None = None
    pad_mode: PadMode | None = None

    def __post_init__(self):
        raw = _frozen_array(self.raw, np.float64)
        if not 1 <= raw.size <= TRIAL_LENGTH:
            raise PipelineError(
                "BAD_SEGMENT", f"raw segment length {raw.size} outside [1, {TRIAL_LENGTH}]"
            )
        object.__setattr__(self, "raw", raw)
        if self.padded is not None:
            padded = _frozen_array(self.padded, np.float64)
            if padded.size != TRIAL_LENGTH:
                raise PipelineError(
                    "BAD_SEGMENT", f"padded length {padded.size} != {TRIAL_LENGTH}"
                )
            if self.pad_mode is None:
                raise PipelineError("BAD_SEGMENT", "padded segment without a pad_mode")
            if not np.array_equal(padded[: raw.size], raw):
                raise PipelineError("BAD_SEGMENT", "padded form does not start with raw")
            object.__setattr__(self, "padded", padded)

    def to_json(self) -> dict:
        obj: dict = {"label": int(self.label), "raw": [float(v) for v in self.raw]}
        if self.padded is not None:
            obj["padded"] = [float(v) for v in self.padded]
            obj["pad_mode"] = self.pad_mode.value
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SegmentSample":
        return cls(
            label=ClassLabel(int(obj["label"])),
            raw=np.array(obj["raw"]),
            padded=np.array(obj["padded"]) if "padded" in obj else None,
            pad_mode=PadMode(obj["pad_mode"]) if "pad_mode" in obj else None,
        )


@dataclass(frozen=True)
class WholeTrialSample:
    """A whole 37-sample series with one class label per timestamp."""

    values: np.ndarray
    labels: tuple[ClassLabel, ...]

    def __post_init__(self):
        values = _frozen_array(self.values, np.float64)
        labels = tuple(ClassLabel(l) for l in self.labels)
        if values.size != TRIAL_LENGTH or len(labels) != TRIAL_LENGTH:
            raise PipelineError(
                "BAD_TRIAL_SAMPLE",
                f"values/labels must both have length {TRIAL_LENGTH}, "
                f"got {values.size}/{len(labels)}",
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    def to_json(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "labels": [int(l) for l in self.labels],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WholeTrialSample":
        return cls(np.array(obj["values"]), tuple(ClassLabel(l) for l in obj["labels"]))
