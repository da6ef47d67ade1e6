"""Multi-class AdaBoost (SAMME) over decision stumps.

The classical comparison point for the recurrent classifier. Stumps
split one feature at a midpoint between consecutive sorted unique
values; each boosting round keeps the stump with the lowest weighted
error, searched exhaustively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import TRIAL_LENGTH, PipelineError

DEFAULT_ROUNDS = 200
EPSILON_FLOOR = 1e-10  # a stump this clean ends boosting; also guards ln(1/eps)


@dataclass(frozen=True)
class Stump:
    """Predict left_class where x[feature_index] <= threshold, else right_class."""

    feature_index: int
    threshold: float
    left_class: int
    right_class: int

    def __post_init__(self):
        if not 0 <= self.feature_index < TRIAL_LENGTH:
            raise PipelineError(
                "BAD_STUMP", f"feature_index {self.feature_index} outside 0..{TRIAL_LENGTH - 1}"
            )

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        side = x[:, self.feature_index] <= self.threshold
        return np.where(side, self.left_class, self.right_class)

    def to_json(self) -> dict:
        return {
            "feature": self.feature_index,
            "threshold": self.threshold,
            "left": self.left_class,
            "right": self.right_class,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Stump":
        return cls(int(obj["feature"]), float(obj["threshold"]),
                   int(obj["left"]), int(obj["right"]))


@dataclass
class Ensemble:
    stumps: list[Stump]
    alphas: list[float]
    classes: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "classes": list(self.classes),
            "rounds": [
                {**stump.to_json(), "alpha": alpha}
                for stump, alpha in zip(self.stumps, self.alphas)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Ensemble":
        stumps = [Stump.from_json(r) for r in obj["rounds"]]
        alphas = [float(r["alpha"]) for r in obj["rounds"]]
        return cls(stumps, alphas, tuple(int(c) for c in obj["classes"]))

    def save(self, path) -> None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(self.to_json(), fh, indent=1, sort_keys=True)
        except OSError as exc:
            raise PipelineError("IO_ERROR", f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Ensemble":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise PipelineError("IO_ERROR", f"cannot read {path}: {exc}") from exc


def best_stump(x: np.ndarray, y: np.ndarray, weights: np.ndarray,
               classes: tuple[int, ...]) -> tuple[Stump | None, float]:
    """Lowest weighted-error stump over all features and midpoint thresholds.

    Ties resolve to the lowest feature index, then the lowest threshold,
    then the lowest class codes (argmax picks the first maximum). Returns
    (None, 1.0) when every feature is constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    weights = np.asarray(weights, dtype=np.float64)
    n, n_features = x.shape
    onehot = np.zeros((n, len(classes)))
    for j, c in enumerate(classes):
        onehot[y == c, j] = 1.0
    weighted = onehot * weights[:, None]
    total_per_class = weighted.sum(axis=0)

    best: Stump | None = None
    best_err = np.inf
    for f in range(n_features):
        order = np.argsort(x[:, f], kind="stable")
        values = x[order, f]
        prefix = np.concatenate(
            [np.zeros((1, len(classes))), np.cumsum(weighted[order], axis=0)]
        )
        boundaries = np.flatnonzero(values[1:] > values[:-1]) + 1
        if boundaries.size == 0:
            continue
        left = prefix[boundaries]
        right = total_per_class[None, :] - left
        err = 1.0 - left.max(axis=1) - right.max(axis=1)
        pick = int(np.argmin(err))
        if err[pick] < best_err - 1e-15:
            b = boundaries[pick]
            best_err = float(err[pick])
            best = Stump(
                feature_index=f,
                threshold=float((values[b - 1] + values[b]) / 2.0),
                left_class=int(classes[int(np.argmax(left[pick]))]),
                right_class=int(classes[int(np.argmax(right[pick]))]),
            )
    if best is None:
        return None, 1.0
    return best, max(best_err, 0.0)


def stage_weight(err: float, n_classes: int, lr: float) -> float:
    """SAMME stage weight: lr * (ln((1-err)/err) + ln(K-1))."""
    return lr * (np.log((1.0 - err) / max(err, EPSILON_FLOOR)) + np.log(n_classes - 1.0))


def adaboost_train(x, y, n_rounds: int = DEFAULT_ROUNDS, lr: float = 0.1,
                   classes: tuple[int, ...] | None = None,
                   on_round=None) -> Ensemble:
    """SAMME boosting: alpha = lr * (ln((1-err)/err) + ln(K-1)).

    Misclassified weights scale by e^alpha and the vector renormalizes to
    sum 1 each round. Boosting halts on a chance-or-worse stump
    (err >= 1 - 1/K) or a near-perfect one (err <= 1e-10, kept).
    on_round, when given, observes (round_index, weights) at the top of
    each round, before the stump fit.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray([int(v) for v in y])
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise PipelineError("SHAPE_MISMATCH", f"x {x.shape} vs y {y.shape}")
    if classes is None:
        classes = tuple(sorted(set(y.tolist())))
    k = len(classes)
    if k < 2:
        raise PipelineError("SINGLE_CLASS", f"need >= 2 classes, got {classes}")
    n = x.shape[0]
    weights = np.full(n, 1.0 / n)
    ensemble = Ensemble([], [], classes)
    for round_index in range(n_rounds):
        if on_round is not None:
            on_round(round_index, weights.copy())
        stump, err = best_stump(x, y, weights, classes)
        if stump is None or err >= 1.0 - 1.0 / k:
            break
        alpha = stage_weight(err, k, lr)
        ensemble.stumps.append(stump)
        ensemble.alphas.append(float(alpha))
        if err <= EPSILON_FLOOR:
            break
        miss = stump.predict(x) != y
        weights = weights * np.exp(alpha * miss)
        weights = weights / weights.sum()
    return ensemble


def adaboost_predict_batch(ensemble: Ensemble, x) -> np.ndarray:
    """Argmax over classes of the alpha-weighted stump votes; ties to lowest code."""
    if not ensemble.stumps:
        raise PipelineError("EMPTY_ENSEMBLE", "no stumps to vote")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    votes = np.zeros((x.shape[0], len(ensemble.classes)))
    col = {c: j for j, c in enumerate(ensemble.classes)}
    for stump, alpha in zip(ensemble.stumps, ensemble.alphas):
        preds = stump.predict(x)
        for c, j in col.items():
            votes[preds == c, j] += alpha
    picks = np.argmax(votes, axis=1)
    return np.asarray([ensemble.classes[int(j)] for j in picks])


def adaboost_predict(ensemble: Ensemble, sample) -> int:
    return int(adaboost_predict_batch(ensemble, np.asarray(sample)[None, :])[0])
