"""Metrics, an exact t-SNE, and deterministic SVG emitters.

Accuracy/confusion and per-class Dice score the classifiers and the
segmenter; t-SNE projects captured activations to 2-D for inspection;
the SVG writers render a truth-vs-prediction ribbon and a labeled
scatter with byte-reproducible output.
"""

from __future__ import annotations

import numpy as np

from .core import ClassLabel, PipelineError

# fill colors per class code, fixed so SVGs are byte-reproducible
PALETTE = {1: "#d62728", 2: "#2ca02c", 3: "#1f77b4"}
FALLBACK_COLOR = "#7f7f7f"

TSNE_LEARNING_RATE = 200.0
TSNE_EXAGGERATION = 4.0
TSNE_EXAGGERATION_ITERS = 100
TSNE_MOMENTUM_SWITCH = 250


def dice(pred, truth, c) -> float:
    """2|P & T| / (|P|+|T|) for the positions labeled c; empty-vs-empty is 1.0."""
    pred = [int(v) for v in pred]
    truth = [int(v) for v in truth]
    if len(pred) != len(truth):
        raise PipelineError(
            "LENGTH_MISMATCH", f"pred has {len(pred)} labels, truth has {len(truth)}"
        )
    c = int(c)
    p = {i for i, v in enumerate(pred) if v == c}
    t = {i for i, v in enumerate(truth) if v == c}
    if not p and not t:
        return 1.0
    return 2.0 * len(p & t) / (len(p) + len(t))


def dice_per_class(pred, truth, classes=(1, 2, 3)) -> dict[int, float]:
    return {int(c): dice(pred, truth, c) for c in classes}


def confusion_and_accuracy(preds, truths, n_classes: int,
                           labels=None) -> tuple[np.ndarray, float]:
    """Counts matrix[truth][pred] plus trace/total accuracy.

    Rows and columns follow `labels` (default: class codes 1..n_classes).
    """
    preds = [int(v) for v in preds]
    truths = [int(v) for v in truths]
    if not preds:
        raise PipelineError("EMPTY", "no predictions to score")
    if len(preds) != len(truths):
        raise PipelineError(
            "LENGTH_MISMATCH", f"{len(preds)} predictions vs {len(truths)} truths"
        )
    if labels is None:
        labels = list(range(1, n_classes + 1))
    labels = [int(c) for c in labels]
    if len(labels) != n_classes:
        raise PipelineError("LENGTH_MISMATCH", f"{len(labels)} labels for n_classes={n_classes}")
    index = {c: i for i, c in enumerate(labels)}
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(truths, preds):
        if t not in index or p not in index:
            raise PipelineError("LENGTH_MISMATCH", f"label {t if t not in index else p} not in {labels}")
        matrix[index[t], index[p]] += 1
    accuracy = float(np.trace(matrix)) / float(matrix.sum())
    return matrix, accuracy


# ---------------------------------------------------------------------------
# exact t-SNE (O(n^2), deterministic)


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    norms = np.einsum("ij,ij->i", x, x)
    d = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_affinities(points, perplexity: float = 30.0) -> np.ndarray:
    """Row-normalized p(j|i) with per-point bandwidth found by bisection.

    Each row's entropy is matched to ln(perplexity) within 1e-4 (or 50
    bisection steps, whichever first); diagonal is zero; rows sum to 1.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise PipelineError("SHAPE_MISMATCH", f"points must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    d = _pairwise_sq_dists(x)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        probs = None
        for _ in range(50):
            w = np.exp(-row * beta)
            total = max(w.sum(), 1e-300)
            probs = w / total
            # H = ln(total) + beta * E[d]; avoids log(0) on tiny weights
            entropy = np.log(total) + beta * float((row * probs).sum())
            if abs(entropy - target) < 1e-4:
                break
            if entropy > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (lo + hi) / 2.0
            else:
                hi = beta
                beta = (lo + hi) / 2.0
        p[i, :i] = probs[:i]
        p[i, i + 1:] = probs[i:]
    return p


def tsne(points, perplexity: float = 30.0, dims: int = 2, iters: int = 1000,
         seed: int = 0) -> np.ndarray:
    """Exact t-SNE embedding; gradient descent with early exaggeration.

    Momentum 0.5 for the first 250 iterations, 0.8 after; learning rate
    200; affinities exaggerated x4 for the first 100 iterations.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise PipelineError("SHAPE_MISMATCH", f"points must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if n < 5:
        raise PipelineError("TOO_FEW_POINTS", f"need at least 5 points, got {n}")
    if float(_pairwise_sq_dists(x).max()) == 0.0:
        raise PipelineError("DEGENERATE", "all input points are identical")

    cond = conditional_affinities(x, perplexity)
    joint = (cond + cond.T) / (2.0 * n)
    joint = np.maximum(joint, 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, dims)) * 1e-2
    velocity = np.zeros_like(y)
    for it in range(iters):
        p = joint * TSNE_EXAGGERATION if it < TSNE_EXAGGERATION_ITERS else joint
        num = 1.0 / (1.0 + _pairwise_sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        l = (p - q) * num
        grad = 4.0 * ((np.diag(l.sum(axis=1)) - l) @ y)
        momentum = 0.5 if it < TSNE_MOMENTUM_SWITCH else 0.8
        velocity = momentum * velocity - TSNE_LEARNING_RATE * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    return y


def knn_purity(embedding, labels, k: int = 5) -> float:
    """Mean fraction of each point's k nearest neighbors sharing its label."""
    y = np.asarray(embedding, dtype=np.float64)
    labels = np.asarray([int(v) for v in labels])
    if y.shape[0] != labels.shape[0]:
        raise PipelineError("LENGTH_MISMATCH", f"{y.shape[0]} points vs {labels.shape[0]} labels")
    d = _pairwise_sq_dists(y)
    np.fill_diagonal(d, np.inf)
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    same = labels[idx] == labels[:, None]
    return float(same.mean())


# ---------------------------------------------------------------------------
# SVG emitters


def _color(label) -> str:
    return PALETTE.get(int(label), FALLBACK_COLOR)


def _write_svg(path, lines: list[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot write {path}: {exc}") from exc


def emit_ribbon_svg(truth, pred, path) -> None:
    """Two stacked color bands around a time axis: truth above, prediction below.

    One 16x16 rect per timestamp per band, nothing else rect-shaped, so a
    37-step pair always yields exactly 74 rects.
    """
    truth = [int(v) for v in truth]
    pred = [int(v) for v in pred]
    if len(truth) != len(pred):
        raise PipelineError(
            "LENGTH_MISMATCH", f"truth has {len(truth)} labels, pred has {len(pred)}"
        )
    n = len(truth)
    cell = 16
    x0, band_gap = 90, 6
    truth_y = 18
    axis_y = truth_y + cell + band_gap
    pred_y = axis_y + band_gap
    width = x0 + n * cell + 12
    height = pred_y + cell + 18
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="10" y="{truth_y + 12}" font-family="monospace" font-size="11">actual</text>',
        f'<text x="10" y="{pred_y + 12}" font-family="monospace" font-size="11">predicted</text>',
        f'<line x1="{x0}" y1="{axis_y}" x2="{x0 + n * cell}" y2="{axis_y}" '
        'stroke="#000000" stroke-width="1"/>',
    ]
    for i, label in enumerate(truth):
        lines.append(
            f'<rect x="{x0 + i * cell}" y="{truth_y}" width="{cell}" height="{cell}" '
            f'fill="{_color(label)}"/>'
        )
    for i, label in enumerate(pred):
        lines.append(
            f'<rect x="{x0 + i * cell}" y="{pred_y}" width="{cell}" height="{cell}" '
            f'fill="{_color(label)}"/>'
        )
    lines.append("</svg>")
    _write_svg(path, lines)


def emit_scatter_svg(embedding, labels, path) -> None:
    """2-D scatter colored by class with a legend; bbox padded by 5%."""
    y = np.asarray(embedding, dtype=np.float64)
    labels = [int(v) for v in labels]
    if y.ndim != 2 or y.shape[1] != 2:
        raise PipelineError("SHAPE_MISMATCH", f"embedding must be n x 2, got {y.shape}")
    if y.shape[0] != len(labels):
        raise PipelineError("LENGTH_MISMATCH", f"{y.shape[0]} points vs {len(labels)} labels")
    size, margin = 480, 40
    xmin, xmax = float(y[:, 0].min()), float(y[:, 0].max())
    ymin, ymax = float(y[:, 1].min()), float(y[:, 1].max())
    if xmax - xmin < 1e-12:
        xmin, xmax = xmin - 1.0, xmax + 1.0
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    pad_x = 0.05 * (xmax - xmin)
    pad_y = 0.05 * (ymax - ymin)
    xmin, xmax = xmin - pad_x, xmax + pad_x
    ymin, ymax = ymin - pad_y, ymax + pad_y
    span = size - 2 * margin

    def sx(v: float) -> str:
        return f"{margin + (v - xmin) / (xmax - xmin) * span:.2f}"

    def sy(v: float) -> str:
        return f"{size - margin - (v - ymin) / (ymax - ymin) * span:.2f}"

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
    ]
    for (px, py), label in zip(y, labels):
        lines.append(
            f'<circle cx="{sx(px)}" cy="{sy(py)}" r="3" fill="{_color(label)}" '
            'fill-opacity="0.8"/>'
        )
    legend_classes = sorted(set(labels))
    for row, c in enumerate(legend_classes):
        ly = 20 + 20 * row
        name = ClassLabel(c).name if c in PALETTE else str(c)
        lines.append(
            f'<rect x="{size - 110}" y="{ly}" width="12" height="12" fill="{_color(c)}"/>'
        )
        lines.append(
            f'<text x="{size - 92}" y="{ly + 10}" font-family="monospace" '
            f'font-size="11">{name}</text>'
        )
    lines.append("</svg>")
    _write_svg(path, lines)
