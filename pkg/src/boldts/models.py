"""Recurrent classifier and segmenter stacks plus the training/CV harness.

The classifier maps one padded 37-sample class segment to a class
probability vector; the segmenter maps one whole-trial series to three
per-timestamp sigmoid masks. Trials are the grouping unit everywhere:
train/validation/test splits never share a trial id.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import (
    Activation,
    Adam,
    BiLstmLayer,
    DenseLayer,
    DropoutLayer,
    FlattenLayer,
    LayerKind,
    LayerSpec,
    LossKind,
    LstmLayer,
    Network,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
)
from .core import (
    TRIAL_LENGTH,
    ClassLabel,
    PadMode,
    PipelineError,
    SegmentSample,
    WholeTrialSample,
    derive_seed,
)
from .evaluation import confusion_and_accuracy, dice
from .preprocess import pad_to


class RecVariant(Enum):
    LSTM = "lstm"
    BILSTM = "bilstm"


@dataclass(frozen=True)
class ClassifierConfig:
    """Fixed per-variant stack; only the recurrent widths and head differ.

    Dense(32) -> Rec(64 out | 128 out, seq) -> Dropout(0.5) ->
    Rec(32 | 64 out, seq) -> Dropout(0.5) -> Flatten -> Dense(64) ->
    Dense(32) -> Dense(3, softmax) or Dense(1, sigmoid).
    """

    variant: RecVariant = RecVariant.BILSTM
    n_classes: int = 3
    classes: tuple[int, ...] = (1, 2, 3)
    input_len: int = TRIAL_LENGTH

    def __post_init__(self):
        if self.n_classes not in (2, 3):
            raise PipelineError("BAD_CONFIG", f"n_classes must be 2 or 3, got {self.n_classes}")
        if len(self.classes) != self.n_classes:
            raise PipelineError(
                "BAD_CONFIG", f"{len(self.classes)} classes listed for n_classes={self.n_classes}"
            )
        codes = [int(c) for c in self.classes]
        if sorted(set(codes)) != codes:
            raise PipelineError("BAD_CONFIG", f"classes must be strictly ascending, got {codes}")
        for c in codes:
            ClassLabel(c)
        if self.input_len < 2:
            raise PipelineError("BAD_CONFIG", f"input_len {self.input_len} too short")


@dataclass(frozen=True)
class SegmenterConfig:
    """Dense(64) -> BiLSTM(256 out, seq) -> Dropout(0.5) -> BiLSTM(512 out,
    seq) -> Dropout(0.5) -> Dense(128) -> Dense(64) -> Flatten -> three
    Dense(37, sigmoid) heads, one per class code in ascending order.
    """

    input_len: int = TRIAL_LENGTH
    classes: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if self.input_len < 2:
            raise PipelineError("BAD_CONFIG", f"input_len {self.input_len} too short")
        if tuple(int(c) for c in self.classes) != (1, 2, 3):
            raise PipelineError("BAD_CONFIG", "segmenter heads are fixed to classes (1, 2, 3)")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 20
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    pad_mode: PadMode = PadMode.ZERO

    def __post_init__(self):
        if not self.lr > 0:
            raise PipelineError("BAD_CONFIG", f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise PipelineError("BAD_CONFIG", f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise PipelineError("BAD_CONFIG", f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise PipelineError("BAD_CONFIG", f"patience must be >= 0, got {self.patience}")


@dataclass(frozen=True)
class FoldReport:
    fold_index: int
    test_accuracy: float
    confusion: tuple[tuple[int, ...], ...]
    dice_per_class: dict[int, float] | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "confusion", tuple(tuple(int(v) for v in row) for row in self.confusion)
        )
        n = len(self.confusion)
        if any(len(row) != n for row in self.confusion):
            raise PipelineError("BAD_REPORT", "confusion matrix must be square")
        total = sum(sum(row) for row in self.confusion)
        trace = sum(self.confusion[i][i] for i in range(n))
        if total > 0 and abs(self.test_accuracy - trace / total) > 1e-9:
            raise PipelineError(
                "BAD_REPORT",
                f"accuracy {self.test_accuracy} != trace/total {trace / total}",
            )
        if self.dice_per_class is not None:
            for c, v in self.dice_per_class.items():
                if not 0.0 <= v <= 1.0:
                    raise PipelineError("BAD_REPORT", f"dice[{c}]={v} outside [0,1]")

    def to_json(self) -> dict:
        return {
            "fold": self.fold_index,
            "accuracy": self.test_accuracy,
            "confusion": [list(row) for row in self.confusion],
            "dice": (
                {str(c): v for c, v in sorted(self.dice_per_class.items())}
                if self.dice_per_class is not None else None
            ),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FoldReport":
        return cls(
            fold_index=int(obj["fold"]),
            test_accuracy=float(obj["accuracy"]),
            confusion=tuple(tuple(int(v) for v in row) for row in obj["confusion"]),
            dice_per_class=(
                {int(c): float(v) for c, v in obj["dice"].items()}
                if obj.get("dice") is not None else None
            ),
        )


# ---------------------------------------------------------------------------
# stack construction


def build_from_specs(layer_specs: list[LayerSpec], head_specs: list[LayerSpec] | None,
                     seed: int, input_len: int = TRIAL_LENGTH,
                     input_dim: int = 1) -> Network:
    """Instantiate a Network from declarative specs, tracking feature widths."""
    rng = np.random.default_rng(derive_seed(seed, "init"))
    layers = []
    width = input_dim
    seq_len = input_len
    for idx, spec in enumerate(layer_specs):
        if spec.kind == LayerKind.DENSE:
            layers.append(DenseLayer(spec, width, rng))
            width = spec.units
        elif spec.kind == LayerKind.LSTM:
            layers.append(LstmLayer(spec, width, rng))
            width = spec.units
        elif spec.kind == LayerKind.BILSTM:
            layers.append(BiLstmLayer(spec, width, rng))
            width = spec.units
        elif spec.kind == LayerKind.DROPOUT:
            layers.append(
                DropoutLayer(spec, np.random.default_rng(derive_seed(seed, "dropout", idx)))
            )
        elif spec.kind == LayerKind.FLATTEN:
            layers.append(FlattenLayer(spec))
            width = seq_len * width
        else:
            raise PipelineError("BAD_SPEC", f"unknown layer kind {spec.kind}")
    heads = None
    if head_specs is not None:
        heads = [DenseLayer(h, width, rng) for h in head_specs]
    return Network(layers, heads, seed)


def classifier_specs(cfg: ClassifierConfig) -> list[LayerSpec]:
    wide = cfg.variant == RecVariant.BILSTM
    rec = LayerKind.BILSTM if wide else LayerKind.LSTM
    out_units, out_act = (
        (3, Activation.SOFTMAX) if cfg.n_classes == 3 else (1, Activation.SIGMOID)
    )
    return [
        LayerSpec(LayerKind.DENSE, 32, Activation.RELU, name="dense_in"),
        LayerSpec(rec, 128 if wide else 64, return_sequences=True, name="rec1"),
        LayerSpec(LayerKind.DROPOUT, dropout_rate=0.5, name="drop1"),
        LayerSpec(rec, 64 if wide else 32, return_sequences=True, name="rec2"),
        LayerSpec(LayerKind.DROPOUT, dropout_rate=0.5, name="drop2"),
        LayerSpec(LayerKind.FLATTEN, name="flatten"),
        LayerSpec(LayerKind.DENSE, 64, Activation.RELU, name="dense_mid"),
        LayerSpec(LayerKind.DENSE, 32, Activation.RELU, name="dense_late"),
        LayerSpec(LayerKind.DENSE, out_units, out_act, name="out"),
    ]


def segmenter_specs(cfg: SegmenterConfig) -> tuple[list[LayerSpec], list[LayerSpec]]:
    trunk = [
        LayerSpec(LayerKind.DENSE, 64, Activation.RELU, name="dense_in"),
        LayerSpec(LayerKind.BILSTM, 256, return_sequences=True, name="rec1"),
        LayerSpec(LayerKind.DROPOUT, dropout_rate=0.5, name="drop1"),
        LayerSpec(LayerKind.BILSTM, 512, return_sequences=True, name="rec2"),
        LayerSpec(LayerKind.DROPOUT, dropout_rate=0.5, name="drop2"),
        LayerSpec(LayerKind.DENSE, 128, Activation.RELU, name="dense_mid"),
        LayerSpec(LayerKind.DENSE, 64, Activation.RELU, name="dense_late"),
        LayerSpec(LayerKind.FLATTEN, name="flatten"),
    ]
    heads = [
        LayerSpec(LayerKind.DENSE, cfg.input_len, Activation.SIGMOID, name=f"class{c}")
        for c in cfg.classes
    ]
    return trunk, heads


def build_classifier(cfg: ClassifierConfig, seed: int) -> Network:
    return build_from_specs(classifier_specs(cfg), None, seed, cfg.input_len)


def build_segmenter(cfg: SegmenterConfig, seed: int) -> Network:
    trunk, heads = segmenter_specs(cfg)
    return build_from_specs(trunk, heads, seed, cfg.input_len)


class Classifier:
    """A trained classification network plus its label bookkeeping."""

    def __init__(self, cfg: ClassifierConfig, net: Network):
        self.cfg = cfg
        self.net = net

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        return self.net.forward(x, training=False)

    def predict(self, x: np.ndarray) -> list[ClassLabel]:
        proba = self.predict_proba(x)
        classes = self.cfg.classes
        if self.cfg.n_classes == 3:
            picks = np.argmax(proba, axis=1)
            return [ClassLabel(classes[i]) for i in picks]
        return [
            ClassLabel(classes[1]) if p > 0.5 else ClassLabel(classes[0])
            for p in proba[:, 0]
        ]


class Segmenter:
    """A trained segmentation network; one sigmoid mask head per class."""

    def __init__(self, cfg: SegmenterConfig, net: Network):
        self.cfg = cfg
        self.net = net

    def predict_masks(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        return self.net.forward(x, training=False)

    def predict_labels(self, x: np.ndarray) -> np.ndarray:
        masks = self.predict_masks(x)  # [N, 3, T]
        return np.argmax(masks, axis=1) + 1  # first max wins: ties to lowest code


def predict_segmentation(model: Segmenter, trial: WholeTrialSample) -> list[ClassLabel]:
    """Per-timestamp argmax across the three heads; ties go to the lowest code."""
    values = np.asarray(trial.values, dtype=np.float64)[None, :]
    codes = model.predict_labels(values)[0]
    return [ClassLabel(int(c)) for c in codes]


def capture_activations(net: Network, x: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Evaluation-mode output of every named layer, plus stacked head output."""
    out = np.asarray(x, dtype=np.float64)
    captured = []
    for i, layer in enumerate(net.layers):
        out = layer.forward(out, training=False)
        captured.append((layer.spec.name or f"layer{i}", out.copy()))
    if net.heads is not None:
        stacked = np.stack([h.forward(out, training=False) for h in net.heads], axis=1)
        captured.append(("heads", stacked))
    return captured


# ---------------------------------------------------------------------------
# splits and training


def assign_folds(group_ids, k: int, seed: int) -> dict[int, int]:
    """Seeded shuffle partition of group ids into k near-equal folds."""
    unique = sorted({int(g) for g in group_ids})
    if k < 3:
        raise PipelineError("TOO_FEW_GROUPS", f"need k >= 3 folds, got k={k}")
    if len(unique) < k:
        raise PipelineError(
            "TOO_FEW_GROUPS", f"{len(unique)} trial groups cannot fill {k} folds"
        )
    rng = np.random.default_rng(derive_seed(seed, "folds", k))
    order = rng.permutation(len(unique))
    return {unique[int(j)]: int(pos % k) for pos, j in enumerate(order)}


def _split_indices(groups, fold_of: dict[int, int], test_fold: int, val_fold: int):
    groups = np.asarray([int(g) for g in groups])
    fold_arr = np.asarray([fold_of[g] for g in groups])
    test_idx = np.flatnonzero(fold_arr == test_fold)
    val_idx = np.flatnonzero(fold_arr == val_fold)
    train_idx = np.flatnonzero((fold_arr != test_fold) & (fold_arr != val_fold))
    if len(test_idx) == 0 or len(val_idx) == 0 or len(train_idx) == 0:
        raise PipelineError("EMPTY_SPLIT", "one of train/val/test received no samples")
    split_groups = {
        "train": tuple(sorted(set(groups[train_idx].tolist()))),
        "val": tuple(sorted(set(groups[val_idx].tolist()))),
        "test": tuple(sorted(set(groups[test_idx].tolist()))),
    }
    return train_idx, val_idx, test_idx, split_groups


def _fit(net: Network, kind: LossKind, x_train, y_train, x_val, y_val,
         tcfg: TrainConfig, run_tag: str) -> tuple[list[dict], int]:
    """Mini-batch Adam with early stopping; restores best-validation weights."""
    opt = Adam(tcfg.lr)
    rng = np.random.default_rng(derive_seed(tcfg.seed, "epochs", run_tag))
    best_val = np.inf
    best_state = net.get_state()
    best_epoch = -1
    bad = 0
    history = []
    n = x_train.shape[0]
    for epoch in range(tcfg.max_epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            out = net.forward(x_train[idx], training=True)
            value, dpred = loss_and_grad(out, y_train[idx], kind)
            net.backward(dpred)
            opt.step(net)
            total += value
            batches += 1
        val_loss, _ = loss_and_grad(net.forward(x_val, training=False), y_val, kind)
        history.append(
            {"epoch": epoch, "train_loss": total / batches, "val_loss": val_loss}
        )
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = net.get_state()
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad >= tcfg.patience:
                break
    net.set_state(best_state)
    return history, best_epoch


@dataclass
class TrainOutcome:
    model: object
    history: list[dict]
    report: FoldReport
    group_splits: dict[str, tuple[int, ...]]
    best_epoch: int


@dataclass
class KFoldResult:
    reports: list[FoldReport]
    mean_accuracy: float
    splits: list[dict[str, tuple[int, ...]]]


def segment_matrix(samples: list[SegmentSample], pad_mode: PadMode,
                   target: int = TRIAL_LENGTH) -> np.ndarray:
    rows = [pad_to(s.raw, target, pad_mode) for s in samples]
    return np.asarray(rows, dtype=np.float64)


def _classifier_targets(samples, cfg: ClassifierConfig) -> np.ndarray:
    index = {int(c): i for i, c in enumerate(cfg.classes)}
    for s in samples:
        if int(s.label) not in index:
            raise PipelineError(
                "BAD_CONFIG", f"sample label {int(s.label)} not among classes {cfg.classes}"
            )
    if cfg.n_classes == 3:
        y = np.zeros((len(samples), 3))
        for i, s in enumerate(samples):
            y[i, index[int(s.label)]] = 1.0
        return y
    return np.asarray(
        [[1.0 if int(s.label) == cfg.classes[1] else 0.0] for s in samples]
    )


def _check_alignment(samples, groups) -> None:
    if len(samples) == 0:
        raise PipelineError("EMPTY_SPLIT", "no samples provided")
    if len(samples) != len(groups):
        raise PipelineError(
            "LENGTH_MISMATCH", f"{len(samples)} samples vs {len(groups)} group ids"
        )


def train_classifier(samples: list[SegmentSample], cfg: ClassifierConfig,
                     tcfg: TrainConfig, groups) -> TrainOutcome:
    """One 80/10/10 grouped split, Adam training, test-set report.

    The split reuses the k-fold partition rule with fold 0 as test and
    fold 1 as validation, shrinking k when fewer than 10 trials exist.
    """
    _check_alignment(samples, groups)
    unique = sorted({int(g) for g in groups})
    k_eff = min(10, len(unique))
    if k_eff < 3:
        raise PipelineError("EMPTY_SPLIT", f"{len(unique)} trial groups cannot fill 3 splits")
    fold_of = assign_folds(unique, k_eff, tcfg.seed)
    train_idx, val_idx, test_idx, split_groups = _split_indices(groups, fold_of, 0, 1)

    x = segment_matrix(samples, tcfg.pad_mode, cfg.input_len)[:, :, None]
    y = _classifier_targets(samples, cfg)
    train_labels = {int(samples[i].label) for i in train_idx}
    if len(train_labels) < 2:
        raise PipelineError("SINGLE_CLASS_TRAIN", f"train split has classes {train_labels}")

    kind = LossKind.CCE if cfg.n_classes == 3 else LossKind.BCE
    net = build_classifier(cfg, derive_seed(tcfg.seed, "classifier", cfg.variant.value))
    history, best_epoch = _fit(
        net, kind, x[train_idx], y[train_idx], x[val_idx], y[val_idx], tcfg, "single"
    )
    model = Classifier(cfg, net)
    preds = model.predict(x[test_idx][:, :, 0])
    truths = [int(samples[i].label) for i in test_idx]
    matrix, accuracy = confusion_and_accuracy(
        [int(p) for p in preds], truths, cfg.n_classes, labels=cfg.classes
    )
    report = FoldReport(0, accuracy, tuple(map(tuple, matrix.tolist())))
    return TrainOutcome(model, history, report, split_groups, best_epoch)


def kfold_cv(samples: list[SegmentSample], groups, cfg: ClassifierConfig,
             tcfg: TrainConfig, k: int = 10) -> KFoldResult:
    """Grouped k-fold: fold i tests, fold (i+1) mod k validates, rest train."""
    _check_alignment(samples, groups)
    fold_of = assign_folds(groups, k, tcfg.seed)
    x = segment_matrix(samples, tcfg.pad_mode, cfg.input_len)[:, :, None]
    y = _classifier_targets(samples, cfg)
    kind = LossKind.CCE if cfg.n_classes == 3 else LossKind.BCE
    reports, splits = [], []
    for i in range(k):
        train_idx, val_idx, test_idx, split_groups = _split_indices(
            groups, fold_of, i, (i + 1) % k
        )
        train_labels = {int(samples[j].label) for j in train_idx}
        if len(train_labels) < 2:
            raise PipelineError("SINGLE_CLASS_TRAIN", f"fold {i} train split has {train_labels}")
        net = build_classifier(cfg, derive_seed(tcfg.seed, "fold", i, cfg.variant.value))
        _fit(net, kind, x[train_idx], y[train_idx], x[val_idx], y[val_idx],
             tcfg, f"fold{i}")
        model = Classifier(cfg, net)
        preds = model.predict(x[test_idx][:, :, 0])
        truths = [int(samples[j].label) for j in test_idx]
        matrix, accuracy = confusion_and_accuracy(
            [int(p) for p in preds], truths, cfg.n_classes, labels=cfg.classes
        )
        reports.append(FoldReport(i, accuracy, tuple(map(tuple, matrix.tolist()))))
        splits.append(split_groups)
    mean_accuracy = float(np.mean([r.test_accuracy for r in reports]))
    return KFoldResult(reports, mean_accuracy, splits)


def _segmenter_targets(trials: list[WholeTrialSample], cfg: SegmenterConfig) -> np.ndarray:
    y = np.zeros((len(trials), len(cfg.classes), cfg.input_len))
    for i, trial in enumerate(trials):
        for t, label in enumerate(trial.labels):
            y[i, int(label) - 1, t] = 1.0
    return y


def train_segmenter(trials: list[WholeTrialSample], scfg: SegmenterConfig,
                    tcfg: TrainConfig, groups) -> TrainOutcome:
    """BCE over the three mask heads; report carries per-class Dice on test trials."""
    _check_alignment(trials, groups)
    unique = sorted({int(g) for g in groups})
    k_eff = min(10, len(unique))
    if k_eff < 3:
        raise PipelineError("EMPTY_SPLIT", f"{len(unique)} trial groups cannot fill 3 splits")
    fold_of = assign_folds(unique, k_eff, tcfg.seed)
    train_idx, val_idx, test_idx, split_groups = _split_indices(groups, fold_of, 0, 1)

    x = np.asarray([t.values for t in trials], dtype=np.float64)[:, :, None]
    y = _segmenter_targets(trials, scfg)
    net = build_segmenter(scfg, derive_seed(tcfg.seed, "segmenter"))
    history, best_epoch = _fit(
        net, LossKind.BCE, x[train_idx], y[train_idx], x[val_idx], y[val_idx],
        tcfg, "segmenter"
    )
    model = Segmenter(scfg, net)
    pred_codes = model.predict_labels(x[test_idx][:, :, 0])
    true_codes = np.asarray([[int(v) for v in trials[i].labels] for i in test_idx])
    matrix, accuracy = confusion_and_accuracy(
        pred_codes.ravel().tolist(), true_codes.ravel().tolist(), len(scfg.classes)
    )
    per_class = {
        int(c): float(np.mean([
            dice(pred_codes[r], true_codes[r], c) for r in range(len(test_idx))
        ]))
        for c in scfg.classes
    }
    report = FoldReport(0, accuracy, tuple(map(tuple, matrix.tolist())), per_class)
    return TrainOutcome(model, history, report, split_groups, best_epoch)


# ---------------------------------------------------------------------------
# persistence


def save_model(model, stem) -> None:
    import json

    stem = str(stem)
    save_checkpoint(model.net, stem)
    if isinstance(model, Classifier):
        meta = {
            "kind": "classifier",
            "variant": model.cfg.variant.value,
            "n_classes": model.cfg.n_classes,
            "classes": list(model.cfg.classes),
            "input_len": model.cfg.input_len,
        }
    elif isinstance(model, Segmenter):
        meta = {"kind": "segmenter", "input_len": model.cfg.input_len}
    else:
        raise PipelineError("BAD_CONFIG", f"cannot save model of type {type(model).__name__}")
    try:
        with open(stem + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot write {stem}.meta.json: {exc}") from exc


def load_model(stem):
    import json

    stem = str(stem)
    try:
        with open(stem + ".meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot read {stem}.meta.json: {exc}") from exc

    def builder(layer_specs, head_specs, seed):
        return build_from_specs(layer_specs, head_specs, seed, int(meta["input_len"]))

    net = load_checkpoint(stem, builder)
    if meta["kind"] == "classifier":
        cfg = ClassifierConfig(
            variant=RecVariant(meta["variant"]),
            n_classes=int(meta["n_classes"]),
            classes=tuple(int(c) for c in meta["classes"]),
            input_len=int(meta["input_len"]),
        )
        return Classifier(cfg, net)
    if meta["kind"] == "segmenter":
        return Segmenter(SegmenterConfig(input_len=int(meta["input_len"])), net)
    raise PipelineError("BAD_CONFIG", f"unknown model kind {meta['kind']!r}")
