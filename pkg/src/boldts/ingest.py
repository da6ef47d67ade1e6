"""Volume IO, active-voxel detection, time-series extraction and splitting.

Detection is a correlation surrogate for an external activation-mapping
step: each voxel's series is correlated against the response-convolved
stimulus indicator, and |r| above threshold marks the voxel active.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import (
    BoldVolume4D,
    ClassLabel,
    PipelineError,
    RoiTag,
    ScheduleEntry,
    SegmentSample,
    StimulusSchedule,
    VoxelTimeSeries,
    validate_schedule,
)
from .synth import HRF_PEAK_SECONDS, canonical_hrf

VOL4D_MAGIC = b"VOL4D\x00\x00\x01"
DEFAULT_THRESHOLD = 0.4


def write_vol4d(vol: BoldVolume4D, path) -> None:
    header = {"dims": list(vol.dims), "tr": vol.tr_seconds}
    try:
        with open(path, "wb") as fh:
            fh.write(VOL4D_MAGIC)
            fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
            fh.write(b"\n")
            fh.write(vol.flat_x_fastest().astype("<f4").tobytes())
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot write {path}: {exc}") from exc


def read_vol4d(path) -> BoldVolume4D:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot read {path}: {exc}") from exc
    if blob[: len(VOL4D_MAGIC)] != VOL4D_MAGIC:
        raise PipelineError("BAD_MAGIC", f"{path} is not a vol4d file")
    newline = blob.find(b"\n", len(VOL4D_MAGIC))
    if newline < 0:
        raise PipelineError("BAD_MAGIC", f"{path}: missing header line")
    try:
        header = json.loads(blob[len(VOL4D_MAGIC): newline].decode("utf-8"))
        dims = tuple(int(d) for d in header["dims"])
        tr = float(header["tr"])
    except (ValueError, KeyError, TypeError) as exc:
        raise PipelineError("BAD_MAGIC", f"{path}: malformed header: {exc}") from exc
    payload = blob[newline + 1:]
    expected = 4 * int(np.prod(dims))
    if len(payload) != expected:
        raise PipelineError(
            "DIM_MISMATCH", f"{path}: {len(payload)} data bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    return BoldVolume4D(dims=dims, tr_seconds=tr, data=flat)


@dataclass(frozen=True)
class ActiveVoxelReport:
    """Voxels whose series track the stimulus regressor, strongest first."""

    coords: tuple[tuple[int, int, int], ...]
    scores: tuple[float, ...]
    threshold: float

    def __post_init__(self):
        if len(self.coords) != len(self.scores):
            raise PipelineError("LENGTH_MISMATCH", "coords and scores differ in length")
        if any(s < self.threshold for s in self.scores):
            raise PipelineError("BAD_REPORT", "score below threshold in report")

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "coords": [list(c) for c in self.coords],
            "scores": [float(s) for s in self.scores],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ActiveVoxelReport":
        return cls(
            coords=tuple(tuple(c) for c in obj["coords"]),
            scores=tuple(obj["scores"]),
            threshold=float(obj["threshold"]),
        )


def stimulus_regressor(schedule: StimulusSchedule, nt: int, tr_seconds: float) -> np.ndarray:
    """Stimulus indicator convolved with the canonical response, length nt."""
    t = np.arange(nt, dtype=np.float64) * tr_seconds
    reg = np.zeros(nt)
    for entry in schedule.entries:
        onset = entry.timestamp * tr_seconds
        after = t >= onset
        reg[after] += canonical_hrf(t[after] - onset)
    return reg


def detect_active_voxels(
    vol: BoldVolume4D,
    schedule: StimulusSchedule,
    threshold: float = DEFAULT_THRESHOLD,
) -> ActiveVoxelReport:
    """Correlation-threshold activation map, sorted by descending |r|.

    Zero-variance voxels are skipped (correlation undefined, never active).
    An empty report is a valid result, not an error.
    """
    if not 0 < threshold < 1:
        raise PipelineError("BAD_THRESHOLD", f"threshold must lie in (0,1), got {threshold}")
    validate_schedule(schedule, vol.nt)
    nx, ny, nz, nt = vol.dims
    reg = stimulus_regressor(schedule, nt, vol.tr_seconds)
    reg_c = reg - reg.mean()
    reg_norm = float(np.sqrt(reg_c @ reg_c))

    series = vol.data.reshape(nx * ny * nz, nt).astype(np.float64)
    centered = series - series.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    valid = norms > 0
    scores = np.zeros(series.shape[0])
    scores[valid] = np.abs(centered[valid] @ reg_c) / (norms[valid] * reg_norm)

    hits = np.flatnonzero(valid & (scores >= threshold))
    # stable tie-break on the flat (x-fastest... here row-major) index
    order = hits[np.argsort(-scores[hits], kind="stable")]
    coords = []
    for flat in order:
        x, rem = divmod(int(flat), ny * nz)
        y, z = divmod(rem, nz)
        coords.append((x, y, z))
    return ActiveVoxelReport(
        coords=tuple(coords),
        scores=tuple(float(scores[f]) for f in order),
        threshold=threshold,
    )


def peak_offset(tr_seconds: float) -> int:
    """Samples between stimulus onset and the response peak on the TR grid."""
    return int(round(HRF_PEAK_SECONDS / tr_seconds))


def shift_to_peak(schedule: StimulusSchedule, tr_seconds: float, nt: int) -> StimulusSchedule:
    """Move each entry's timestamp from the onset to its expected peak sample.

    Extraction reads one sample per stimulus; reading at the peak rather
    than the onset is what makes that single sample informative.
    """
    off = peak_offset(tr_seconds)
    entries = tuple(
        ScheduleEntry(e.timestamp + off, e.stimulus_id, e.label) for e in schedule.entries
    )
    shifted = StimulusSchedule(trial_id=schedule.trial_id, entries=entries)
    validate_schedule(shifted, nt)
    return shifted


def extract_whole_ts(
    vol: BoldVolume4D,
    coord: tuple[int, int, int],
    schedule: StimulusSchedule,
    roi: RoiTag = RoiTag.OTHER,
) -> VoxelTimeSeries:
    """Read the voxel's value at each schedule timestamp, in schedule order."""
    validate_schedule(schedule, vol.nt)
    ts = vol.voxel_ts(*coord)
    samples = ts[list(schedule.timestamps)]
    return VoxelTimeSeries(coord=coord, roi=roi, samples=samples)


def split_by_class(
    ts: VoxelTimeSeries, schedule: StimulusSchedule
) -> dict[ClassLabel, SegmentSample]:
    """Partition the whole series into per-class subsequences, order preserved."""
    labels = schedule.labels
    if len(labels) != ts.samples.size:
        raise PipelineError(
            "LENGTH_MISMATCH",
            f"series has {ts.samples.size} samples but schedule has {len(labels)} entries",
        )
    out = {}
    for cls in ClassLabel:
        values = [float(v) for v, l in zip(ts.samples, labels) if l == cls]
        if values:
            out[cls] = SegmentSample(label=cls, raw=np.array(values))
    return out


def load_roi_map(path) -> dict[tuple[int, int, int], RoiTag]:
    """Read the ROI sidecar: JSON object mapping "x,y,z" to a tag string."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot read {path}: {exc}") from exc
    out = {}
    for key, tag in raw.items():
        coord = tuple(int(p) for p in key.split(","))
        if len(coord) != 3:
            raise PipelineError("BAD_ROI_MAP", f"bad coordinate key {key!r}")
        out[coord] = RoiTag(tag)
    return out
