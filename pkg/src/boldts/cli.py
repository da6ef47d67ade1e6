"""Command-line pipeline: synth -> extract -> train -> eval/tsne/ribbon.

Every subcommand reads a strict JSON config (unknown keys rejected),
derives all randomness from one seed, and writes byte-reproducible
artifacts into --out. Exit codes: 0 success, 1 validation error, 2 IO
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np

from .baseline import adaboost_predict_batch, adaboost_train
from .core import (
    ClassLabel,
    PadMode,
    PipelineError,
    SegmentSample,
    StimulusSchedule,
    VoxelTimeSeries,
    WholeTrialSample,
    derive_seed,
)
from .evaluation import (
    confusion_and_accuracy,
    dice_per_class,
    emit_ribbon_svg,
    emit_scatter_svg,
    tsne,
)
from .ingest import (
    DEFAULT_THRESHOLD,
    detect_active_voxels,
    extract_whole_ts,
    read_vol4d,
    shift_to_peak,
    split_by_class,
    write_vol4d,
)
from .models import (
    ClassifierConfig,
    FoldReport,
    RecVariant,
    SegmenterConfig,
    TrainConfig,
    capture_activations,
    kfold_cv,
    load_model,
    predict_segmentation,
    save_model,
    segment_matrix,
    train_classifier,
    train_segmenter,
)
from .preprocess import pad_to, preprocess_series
from .synth import (
    DEFAULT_LEAD_IN_TR,
    DEFAULT_SPACING_TR,
    SynthConfig,
    generate,
    make_schedules,
)

GLOBAL_KEYS = {"seed"}
ALLOWED_KEYS = {
    "synth": {
        "dims", "n_trials", "tr_seconds", "class_amplitudes", "noise_sigma",
        "ar1_rho", "active_fraction", "drift_slope", "spacing_tr", "lead_in_tr",
    },
    "extract": {"in_dir", "threshold"},
    "train-cls": {
        "segments", "variant", "classes", "k", "pad_mode", "lr", "batch_size",
        "max_epochs", "patience", "adaboost", "adaboost_rounds", "adaboost_lr",
    },
    "train-seg": {"trials", "lr", "batch_size", "max_epochs", "patience"},
    "eval": {"reports", "predictions"},
    "tsne": {"segments", "perplexity", "iters", "dims", "model", "layer", "max_points"},
    "ribbon": {"predictions", "index"},
}


class _Parser(argparse.ArgumentParser):
    """Usage problems are validation errors: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PipelineError("BAD_CONFIG", f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise PipelineError("BAD_CONFIG", "config root must be a JSON object")
    return cfg


def _check_keys(cfg: dict, subcommand: str) -> None:
    allowed = ALLOWED_KEYS[subcommand] | GLOBAL_KEYS
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise PipelineError(
            "BAD_CONFIG", f"unknown config key(s) for {subcommand}: {', '.join(unknown)}"
        )


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise PipelineError("BAD_CONFIG", f"config key {key!r} is required")
    return cfg[key]


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot create output dir {out}: {exc}") from exc
    return out


def _write_json(path: Path, obj) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot write {path}: {exc}") from exc


def _write_jsonl(path: Path, rows) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot write {path}: {exc}") from exc


def _read_jsonl(path) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise PipelineError("BAD_INPUT", f"{path}:{lineno} is not valid JSON: {exc}") from exc
    return rows


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict, seed: int, out: Path) -> None:
    amplitudes = None
    if "class_amplitudes" in cfg:
        amplitudes = {ClassLabel(int(k)): float(v) for k, v in cfg["class_amplitudes"].items()}
    scfg = SynthConfig(
        dims=tuple(cfg.get("dims", (5, 5, 4))),
        n_trials=int(cfg.get("n_trials", 20)),
        tr_seconds=float(cfg.get("tr_seconds", 1.0)),
        class_amplitudes=amplitudes,
        noise_sigma=float(cfg.get("noise_sigma", 0.2)),
        ar1_rho=float(cfg.get("ar1_rho", 0.3)),
        active_fraction=float(cfg.get("active_fraction", 0.1)),
        drift_slope=float(cfg.get("drift_slope", 0.0)),
        seed=seed,
    )
    spacing = int(cfg.get("spacing_tr", DEFAULT_SPACING_TR))
    lead_in = int(cfg.get("lead_in_tr", DEFAULT_LEAD_IN_TR))
    schedules = make_schedules(scfg, spacing, lead_in)
    volumes, active = generate(scfg, schedules)
    for schedule, volume in zip(schedules, volumes):
        write_vol4d(volume, out / f"trial_{schedule.trial_id:03d}.vol4d")
        _write_json(out / f"schedule_{schedule.trial_id:03d}.json", schedule.to_json())
    _write_json(
        out / "truth.json",
        {
            "active_voxels": [list(c) for c in active],
            "dims": list(scfg.dims),
            "n_trials": scfg.n_trials,
            "seed": scfg.seed,
        },
    )
    names = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    _write_json(out / "manifest.json", {"files": {n: _sha256(out / n) for n in names}})
    print(f"synth: wrote {scfg.n_trials} trials, {len(active)} active voxels -> {out}")


def cmd_extract(cfg: dict, seed: int, out: Path) -> None:
    in_dir = Path(_require(cfg, "in_dir"))
    threshold = float(cfg.get("threshold", DEFAULT_THRESHOLD))
    vol_paths = sorted(in_dir.glob("trial_*.vol4d"))
    if not vol_paths:
        raise PipelineError("IO_ERROR", f"no trial_*.vol4d files under {in_dir}")
    trial_rows, segment_rows, detection = [], [], []
    for vol_path in vol_paths:
        match = re.fullmatch(r"trial_(\d+)\.vol4d", vol_path.name)
        if not match:
            continue
        trial_id = int(match.group(1))
        sched_path = in_dir / f"schedule_{trial_id:03d}.json"
        if not sched_path.exists():
            raise PipelineError("IO_ERROR", f"missing schedule file {sched_path}")
        volume = read_vol4d(vol_path)
        schedule = StimulusSchedule.from_json(json.loads(sched_path.read_text()))
        report = detect_active_voxels(volume, schedule, threshold)
        detection.append({"trial_id": trial_id, **report.to_json()})
        shifted = shift_to_peak(schedule, volume.tr_seconds, volume.nt)
        for coord, score in zip(report.coords, report.scores):
            ts = extract_whole_ts(volume, coord, shifted)
            values = preprocess_series(ts.samples)
            trial_rows.append({
                "trial_id": trial_id,
                "voxel": list(coord),
                "score": score,
                "values": [float(v) for v in values],
                "labels": [int(v) for v in shifted.labels],
            })
            clean = VoxelTimeSeries(coord=coord, roi=ts.roi, samples=values)
            for label, segment in sorted(split_by_class(clean, shifted).items()):
                segment_rows.append({
                    "trial_id": trial_id,
                    "voxel": list(coord),
                    "label": int(label),
                    "raw": [float(v) for v in segment.raw],
                    "padded_zero": [float(v) for v in pad_to(segment.raw, 37, PadMode.ZERO)],
                    "padded_repeat": [float(v) for v in pad_to(segment.raw, 37, PadMode.REPEAT)],
                })
    _write_jsonl(out / "trials.jsonl", trial_rows)
    _write_jsonl(out / "segments.jsonl", segment_rows)
    _write_json(out / "detection.json", {"threshold": threshold, "trials": detection})
    if not segment_rows:
        print("extract: warning: no active voxels detected, outputs are empty",
              file=sys.stderr)
    print(f"extract: {len(trial_rows)} whole-trial series, {len(segment_rows)} segments -> {out}")


def _row_fields(row: dict, keys, path) -> None:
    missing = sorted(k for k in keys if k not in row)
    if missing:
        raise PipelineError(
            "BAD_INPUT", f"{path}: row is missing key(s): {', '.join(missing)}"
        )


def _load_segments(path, classes=None) -> tuple[list[SegmentSample], list[int]]:
    samples, groups = [], []
    for row in _read_jsonl(path):
        _row_fields(row, ("label", "raw", "trial_id"), path)
        label = int(row["label"])
        if classes is not None and label not in classes:
            continue
        samples.append(SegmentSample(label=ClassLabel(label), raw=row["raw"]))
        groups.append(int(row["trial_id"]))
    if not samples:
        raise PipelineError("BAD_INPUT", f"no usable segments in {path}")
    return samples, groups


def cmd_train_cls(cfg: dict, seed: int, out: Path) -> None:
    classes = tuple(int(c) for c in cfg.get("classes", (1, 2, 3)))
    samples, groups = _load_segments(_require(cfg, "segments"), set(classes))
    ccfg = ClassifierConfig(
        variant=RecVariant(cfg.get("variant", "bilstm")),
        n_classes=len(classes),
        classes=classes,
    )
    tcfg = TrainConfig(
        lr=float(cfg.get("lr", 0.001)),
        batch_size=int(cfg.get("batch_size", 20)),
        max_epochs=int(cfg.get("max_epochs", 100)),
        patience=int(cfg.get("patience", 10)),
        seed=derive_seed(seed, "train-cls"),
        pad_mode=PadMode(cfg.get("pad_mode", "zero")),
    )
    k = int(cfg.get("k", 10))
    summary = {
        "variant": ccfg.variant.value,
        "classes": list(classes),
        "pad_mode": tcfg.pad_mode.value,
        "k": k,
        "n_samples": len(samples),
    }
    if k == 1:
        outcome = train_classifier(samples, ccfg, tcfg, groups)
        _write_jsonl(out / "fold_reports.jsonl", [outcome.report.to_json()])
        summary["mean_accuracy"] = outcome.report.test_accuracy
        summary["best_epoch"] = outcome.best_epoch
        summary["splits"] = [{s: list(g) for s, g in outcome.group_splits.items()}]
        save_model(outcome.model, out / "cls_model")
    else:
        result = kfold_cv(samples, groups, ccfg, tcfg, k)
        _write_jsonl(out / "fold_reports.jsonl", [r.to_json() for r in result.reports])
        summary["mean_accuracy"] = result.mean_accuracy
        summary["splits"] = [{s: list(g) for s, g in fold.items()} for fold in result.splits]
    if cfg.get("adaboost", False):
        x = segment_matrix(samples, tcfg.pad_mode)
        y = np.asarray([int(s.label) for s in samples])
        ensemble = adaboost_train(
            x, y,
            n_rounds=int(cfg.get("adaboost_rounds", 200)),
            lr=float(cfg.get("adaboost_lr", 0.1)),
            classes=classes,
        )
        preds = adaboost_predict_batch(ensemble, x)
        _, train_acc = confusion_and_accuracy(
            preds.tolist(), y.tolist(), len(classes), labels=classes
        )
        summary["adaboost_train_accuracy"] = train_acc
        ensemble.save(out / "adaboost.json")
    _write_json(out / "summary.json", summary)
    print(f"train-cls: mean accuracy {summary['mean_accuracy']:.4f} over k={k} -> {out}")


def cmd_train_seg(cfg: dict, seed: int, out: Path) -> None:
    trials_path = _require(cfg, "trials")
    rows = _read_jsonl(trials_path)
    if not rows:
        raise PipelineError("BAD_INPUT", "trials file is empty")
    for row in rows:
        _row_fields(row, ("values", "labels", "trial_id"), trials_path)
    trials = [
        WholeTrialSample(values=row["values"], labels=row["labels"]) for row in rows
    ]
    groups = [int(row["trial_id"]) for row in rows]
    tcfg = TrainConfig(
        lr=float(cfg.get("lr", 0.001)),
        batch_size=int(cfg.get("batch_size", 20)),
        max_epochs=int(cfg.get("max_epochs", 100)),
        patience=int(cfg.get("patience", 10)),
        seed=derive_seed(seed, "train-seg"),
    )
    scfg = SegmenterConfig()
    outcome = train_segmenter(trials, scfg, tcfg, groups)
    test_groups = set(outcome.group_splits["test"])
    predictions = []
    for row, trial in zip(rows, trials):
        if int(row["trial_id"]) not in test_groups:
            continue
        pred = predict_segmentation(outcome.model, trial)
        predictions.append({
            "trial_id": int(row["trial_id"]),
            "voxel": row.get("voxel"),
            "truth": [int(v) for v in trial.labels],
            "pred": [int(p) for p in pred],
        })
    _write_jsonl(out / "predictions.jsonl", predictions)
    _write_json(
        out / "seg_report.json",
        {
            **outcome.report.to_json(),
            "best_epoch": outcome.best_epoch,
            "splits": {s: list(g) for s, g in outcome.group_splits.items()},
        },
    )
    save_model(outcome.model, out / "seg_model")
    mean_dice = float(np.mean(list(outcome.report.dice_per_class.values())))
    print(f"train-seg: mean dice {mean_dice:.4f}, accuracy "
          f"{outcome.report.test_accuracy:.4f} -> {out}")


def cmd_eval(cfg: dict, seed: int, out: Path) -> None:
    if "reports" not in cfg and "predictions" not in cfg:
        raise PipelineError("BAD_CONFIG", "eval needs 'reports' and/or 'predictions'")
    result: dict = {}
    if "reports" in cfg:
        reports = [FoldReport.from_json(row) for row in _read_jsonl(cfg["reports"])]
        if not reports:
            raise PipelineError("BAD_INPUT", "reports file is empty")
        n = len(reports[0].confusion)
        total = np.zeros((n, n), dtype=np.int64)
        for r in reports:
            total += np.asarray(r.confusion, dtype=np.int64)
        result["mean_accuracy"] = float(np.mean([r.test_accuracy for r in reports]))
        result["total_confusion"] = total.tolist()
        result["n_folds"] = len(reports)
        dices = [r.dice_per_class for r in reports if r.dice_per_class is not None]
        if dices:
            keys = sorted(dices[0])
            result["mean_dice"] = {
                str(c): float(np.mean([d[c] for d in dices])) for c in keys
            }
    if "predictions" in cfg:
        rows = _read_jsonl(cfg["predictions"])
        if not rows:
            raise PipelineError("BAD_INPUT", "predictions file is empty")
        per_class: dict[int, list[float]] = {1: [], 2: [], 3: []}
        preds_flat, truths_flat = [], []
        for row in rows:
            _row_fields(row, ("pred", "truth"), cfg["predictions"])
            scores = dice_per_class(row["pred"], row["truth"])
            for c, v in scores.items():
                per_class[c].append(v)
            preds_flat.extend(int(v) for v in row["pred"])
            truths_flat.extend(int(v) for v in row["truth"])
        matrix, accuracy = confusion_and_accuracy(preds_flat, truths_flat, 3)
        result["segmentation"] = {
            "mean_dice": {str(c): float(np.mean(v)) for c, v in per_class.items()},
            "timestamp_accuracy": accuracy,
            "confusion": matrix.tolist(),
            "n_series": len(rows),
        }
    _write_json(out / "eval.json", result)
    print(f"eval: wrote {out / 'eval.json'}")


def cmd_tsne(cfg: dict, seed: int, out: Path) -> None:
    rows = _read_jsonl(_require(cfg, "segments"))
    if not rows:
        raise PipelineError("BAD_INPUT", "segments file is empty")
    max_points = int(cfg.get("max_points", len(rows)))
    rows = rows[:max_points]
    x = np.asarray([row["padded_zero"] for row in rows], dtype=np.float64)
    labels = [int(row["label"]) for row in rows]
    if "model" in cfg:
        model = load_model(cfg["model"])
        layer = cfg.get("layer", "dense_late")
        captured = dict(capture_activations(model.net, x[:, :, None]))
        if layer not in captured:
            raise PipelineError("BAD_CONFIG", f"no layer named {layer!r} in model")
        x = captured[layer].reshape(len(rows), -1)
    embedding = tsne(
        x,
        perplexity=float(cfg.get("perplexity", 30.0)),
        dims=int(cfg.get("dims", 2)),
        iters=int(cfg.get("iters", 1000)),
        seed=derive_seed(seed, "tsne"),
    )
    _write_json(
        out / "tsne.json",
        {"embedding": [[float(a), float(b)] for a, b in embedding], "labels": labels},
    )
    emit_scatter_svg(embedding, labels, out / "scatter.svg")
    print(f"tsne: embedded {len(rows)} points -> {out}")


def cmd_ribbon(cfg: dict, seed: int, out: Path) -> None:
    rows = _read_jsonl(_require(cfg, "predictions"))
    index = int(cfg.get("index", 0))
    if not 0 <= index < len(rows):
        raise PipelineError("BAD_CONFIG", f"index {index} outside 0..{len(rows) - 1}")
    row = rows[index]
    _row_fields(row, ("truth", "pred"), cfg["predictions"])
    emit_ribbon_svg(row["truth"], row["pred"], out / "ribbon.svg")
    print(f"ribbon: wrote {out / 'ribbon.svg'}")


HANDLERS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train-cls": cmd_train_cls,
    "train-seg": cmd_train_seg,
    "eval": cmd_eval,
    "tsne": cmd_tsne,
    "ribbon": cmd_ribbon,
}


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="path to a strict JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker hint; 1 forces bit-exact mode (always honored)")
    common.add_argument("--out", required=True, help="output directory")
    parser = _Parser(prog="boldts",
                     description="synthetic BOLD time-series pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in HANDLERS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise PipelineError("BAD_CONFIG", f"--threads must be >= 1, got {args.threads}")
        cfg = _load_config(args.config)
        _check_keys(cfg, args.subcommand)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out = _out_dir(args)
        HANDLERS[args.subcommand](cfg, seed, out)
        return 0
    except PipelineError as exc:
        print(f"boldts {args.subcommand}: error [{exc.code}]: {exc}", file=sys.stderr)
        return 2 if exc.code.startswith("IO_") else 1


if __name__ == "__main__":
    sys.exit(main())
