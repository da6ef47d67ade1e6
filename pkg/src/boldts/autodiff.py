"""Reverse-mode differentiation core: the exact layer set the models need.

Dense / LSTM / Bi-LSTM / dropout / flatten with hand-derived backward
passes, BCE and CCE losses, Adam, checkpointing, and a central-difference
gradient checker. Everything runs in float64; tensors are plain numpy
arrays, row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import PipelineError, derive_seed

PROB_EPS = 1e-7  # clamp bound inside the losses, avoids log(0)


class Activation(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    TANH = "tanh"
    NONE = "none"


class LossKind(Enum):
    BCE = "bce"
    CCE = "cce"


class LayerKind(Enum):
    DENSE = "dense"
    LSTM = "lstm"
    BILSTM = "bilstm"
    DROPOUT = "dropout"
    FLATTEN = "flatten"


@dataclass
class LayerSpec:
    """Declarative description of one layer, also the checkpoint manifest row."""

    kind: LayerKind
    units: int = 0
    activation: Activation = Activation.NONE
    dropout_rate: float = 0.0
    return_sequences: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind == LayerKind.DROPOUT and not 0 <= self.dropout_rate < 1:
            raise PipelineError("BAD_RATE", f"dropout_rate {self.dropout_rate} outside [0,1)")
        if self.kind in (LayerKind.DENSE, LayerKind.LSTM, LayerKind.BILSTM) and self.units < 1:
            raise PipelineError("BAD_SPEC", f"{self.kind.value} layer needs units >= 1")

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "units": self.units,
            "activation": self.activation.value,
            "dropout_rate": self.dropout_rate,
            "return_sequences": self.return_sequences,
            "name": self.name,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LayerSpec":
        return cls(
            kind=LayerKind(obj["kind"]),
            units=int(obj["units"]),
            activation=Activation(obj["activation"]),
            dropout_rate=float(obj["dropout_rate"]),
            return_sequences=bool(obj["return_sequences"]),
            name=obj.get("name", ""),
        )


def sigmoid(z: np.ndarray) -> np.ndarray:
    # exp overflow at z < -745 saturates to inf and the quotient to exactly 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z: np.ndarray, act: Activation) -> np.ndarray:
    if act == Activation.RELU:
        return np.maximum(z, 0.0)
    if act == Activation.SIGMOID:
        return sigmoid(z)
    if act == Activation.SOFTMAX:
        return softmax(z)
    if act == Activation.TANH:
        return np.tanh(z)
    return z


def _activate_backward(grad: np.ndarray, out: np.ndarray, act: Activation) -> np.ndarray:
    if act == Activation.RELU:
        return grad * (out > 0)
    if act == Activation.SIGMOID:
        return grad * out * (1.0 - out)
    if act == Activation.SOFTMAX:
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return out * (grad - inner)
    if act == Activation.TANH:
        return grad * (1.0 - out * out)
    return grad


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# functional ops


def dense_forward(x, w, b, activation: Activation = Activation.NONE) -> np.ndarray:
    """act(x @ w + b); applied per timestep when x carries a leading sequence axis."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise PipelineError(
            "SHAPE_MISMATCH", f"dense: x {x.shape}, w {w.shape}, b {b.shape}"
        )
    return _activate(x @ w + b, activation)


@dataclass
class LstmParams:
    """Gate weights packed along the last axis in (input, forget, cell, output) order."""

    w: np.ndarray  # [d, 4u]
    u: np.ndarray  # [units, 4u]
    b: np.ndarray  # [4u]

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        units = self.u.shape[0]
        if self.u.shape != (units, 4 * units) or self.w.shape[1] != 4 * units \
                or self.b.shape != (4 * units,):
            raise PipelineError(
                "SHAPE_MISMATCH",
                f"lstm params: w {self.w.shape}, u {self.u.shape}, b {self.b.shape}",
            )

    @property
    def units(self) -> int:
        return self.u.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, units: int,
             forget_bias: float = 1.0) -> "LstmParams":
        w = glorot_uniform(rng, (d_in, 4 * units), d_in, 4 * units)
        u = glorot_uniform(rng, (units, 4 * units), units, 4 * units)
        b = np.zeros(4 * units)
        b[units: 2 * units] = forget_bias
        return cls(w, u, b)


def _lstm_forward_cached(x: np.ndarray, p: LstmParams, return_sequences: bool):
    """x: [B, T, d]. Returns (output, cache) with h_0 = c_0 = 0.

    The input projection x @ w is batched over all timesteps up front; the
    step loop only carries the recurrent matmul. Gate activations land in
    preallocated [T, B, 4u] storage, packed (i, f, g, o).
    """
    if x.ndim != 3 or x.shape[2] != p.w.shape[0]:
        raise PipelineError("SHAPE_MISMATCH", f"lstm: x {x.shape}, w {p.w.shape}")
    bsz, steps, _ = x.shape
    u = p.units
    zx = (x.reshape(-1, x.shape[2]) @ p.w + p.b).reshape(bsz, steps, 4 * u)
    gates = np.empty((steps, bsz, 4 * u))
    cells = np.empty((steps, bsz, u))
    tanh_c = np.empty((steps, bsz, u))
    hs = np.empty((steps, bsz, u))
    h = np.zeros((bsz, u))
    c = np.zeros((bsz, u))
    for t in range(steps):
        z = zx[:, t, :] + h @ p.u
        row = gates[t]
        row[:, :2 * u] = sigmoid(z[:, :2 * u])          # i, f
        row[:, 2 * u:3 * u] = np.tanh(z[:, 2 * u:3 * u])  # g
        row[:, 3 * u:] = sigmoid(z[:, 3 * u:])          # o
        c = row[:, u:2 * u] * c + row[:, :u] * row[:, 2 * u:3 * u]
        tc = np.tanh(c)
        h = row[:, 3 * u:] * tc
        cells[t] = c
        tanh_c[t] = tc
        hs[t] = h
    out = hs.transpose(1, 0, 2).copy() if return_sequences else hs[-1].copy()
    cache = (x, gates, cells, tanh_c, hs)
    return out, cache


def _lstm_backward(grad_out: np.ndarray, p: LstmParams, cache, return_sequences: bool):
    """Backpropagation through time; returns (dx, dw, du, db)."""
    x, gates, cells, tanh_c, hs = cache
    bsz, steps, _ = x.shape
    u = p.units
    if return_sequences:
        dh_seq = np.ascontiguousarray(grad_out.transpose(1, 0, 2))  # [T, B, u]
    dz_all = np.empty((steps, bsz, 4 * u))
    dh_next = np.zeros((bsz, u))
    dc_next = np.zeros((bsz, u))
    u_t = p.u.T
    for t in range(steps - 1, -1, -1):
        if return_sequences:
            dh = dh_next + dh_seq[t]
        elif t == steps - 1:
            dh = dh_next + grad_out
        else:
            dh = dh_next
        i = gates[t, :, :u]
        f = gates[t, :, u:2 * u]
        g = gates[t, :, 2 * u:3 * u]
        o = gates[t, :, 3 * u:]
        tc = tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :u] = dc * g * (i * (1.0 - i))
        if t > 0:
            dz[:, u:2 * u] = dc * cells[t - 1] * (f * (1.0 - f))
        else:
            dz[:, u:2 * u] = 0.0  # c_{-1} = 0
        dz[:, 2 * u:3 * u] = dc * i * (1.0 - g * g)
        dz[:, 3 * u:] = dh * tc * (o * (1.0 - o))
        dh_next = dz @ u_t
        dc_next = dc * f
    # recurrent weights see h_{t-1}; h_{-1} is zero so t=0 contributes nothing
    dz2 = dz_all.reshape(steps * bsz, 4 * u)
    if steps > 1:
        du = hs[:-1].reshape(-1, u).T @ dz_all[1:].reshape(-1, 4 * u)
    else:
        du = np.zeros_like(p.u)
    xt = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(steps * bsz, -1)
    dw = xt.T @ dz2
    db = dz2.sum(axis=0)
    dx = np.ascontiguousarray((dz_all @ p.w.T).transpose(1, 0, 2))
    return dx, dw, du, db


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, :, :], True
    return x, False


def lstm_forward(x, params: LstmParams, return_sequences: bool = False) -> np.ndarray:
    """Standard LSTM recurrence over a [T, d] or [B, T, d] input."""
    xb, squeezed = _as_batched(x)
    out, _ = _lstm_forward_cached(xb, params, return_sequences)
    return out[0] if squeezed else out


def bilstm_forward(x, params_fwd: LstmParams, params_bwd: LstmParams,
                   return_sequences: bool = False) -> np.ndarray:
    """Concatenate the forward pass and the time-reversed backward pass.

    Output width is twice the per-direction units.
    """
    xb, squeezed = _as_batched(x)
    out_f, _ = _lstm_forward_cached(xb, params_fwd, return_sequences)
    out_b, _ = _lstm_forward_cached(xb[:, ::-1, :], params_bwd, return_sequences)
    if return_sequences:
        out = np.concatenate([out_f, out_b[:, ::-1, :]], axis=2)
    else:
        out = np.concatenate([out_f, out_b], axis=1)
    return out[0] if squeezed else out


def dropout(x, rate: float, training: bool, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: scale survivors by 1/(1-rate) so inference is identity."""
    if not 0 <= rate < 1:
        raise PipelineError("BAD_RATE", f"dropout rate {rate} outside [0,1)")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask


def loss(pred, target, kind: LossKind) -> float:
    """BCE or CCE with probabilities clamped to [1e-7, 1-1e-7]."""
    value, _ = loss_and_grad(pred, target, kind)
    return value


def loss_and_grad(pred, target, kind: LossKind) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise PipelineError("SHAPE_MISMATCH", f"loss: pred {pred.shape} vs target {target.shape}")
    clamped = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    inside = (pred > PROB_EPS) & (pred < 1.0 - PROB_EPS)
    if kind == LossKind.BCE:
        n = pred.size
        value = -np.mean(target * np.log(clamped) + (1.0 - target) * np.log1p(-clamped))
        grad = (-target / clamped + (1.0 - target) / (1.0 - clamped)) / n
    elif kind == LossKind.CCE:
        n_samples = int(np.prod(pred.shape[:-1])) or 1
        value = -np.sum(target * np.log(clamped)) / n_samples
        grad = -(target / clamped) / n_samples
    else:
        raise PipelineError("BAD_LOSS", f"unknown loss kind {kind}")
    return float(value), grad * inside


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update for a single tensor; returns (param, m, v)."""
    if param.shape != grad.shape or param.shape != m.shape or param.shape != v.shape:
        raise PipelineError(
            "STATE_SHAPE_MISMATCH",
            f"adam: param {param.shape}, grad {grad.shape}, m {m.shape}, v {v.shape}",
        )
    if t < 1:
        raise PipelineError("BAD_STEP", "adam step index starts at 1")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


# ---------------------------------------------------------------------------
# layer objects (thin stateful wrappers over the functional ops)


class Layer:
    spec: LayerSpec

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def set_param(self, key: str, value: np.ndarray) -> None:
        pass


class DenseLayer(Layer):
    def __init__(self, spec: LayerSpec, d_in: int, rng: np.random.Generator):
        self.spec = spec
        self.w = glorot_uniform(rng, (d_in, spec.units), d_in, spec.units)
        self.b = np.zeros(spec.units)
        self._cache = None
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x, training=False):
        out = dense_forward(x, self.w, self.b, self.spec.activation)
        self._cache = (np.asarray(x, dtype=np.float64), out)
        return out

    def backward(self, grad):
        x, out = self._cache
        dz = _activate_backward(grad, out, self.spec.activation)
        x2 = x.reshape(-1, x.shape[-1])
        dz2 = dz.reshape(-1, dz.shape[-1])
        self.dw = x2.T @ dz2
        self.db = dz2.sum(axis=0)
        return dz @ self.w.T

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def set_param(self, key, value):
        setattr(self, key, np.asarray(value, dtype=np.float64))


class LstmLayer(Layer):
    def __init__(self, spec: LayerSpec, d_in: int, rng: np.random.Generator):
        self.spec = spec
        self.p = LstmParams.init(rng, d_in, spec.units)
        self._cache = None
        self.dw = np.zeros_like(self.p.w)
        self.du = np.zeros_like(self.p.u)
        self.db = np.zeros_like(self.p.b)

    def forward(self, x, training=False):
        out, cache = _lstm_forward_cached(
            np.asarray(x, dtype=np.float64), self.p, self.spec.return_sequences
        )
        self._cache = cache
        return out

    def backward(self, grad):
        dx, self.dw, self.du, self.db = _lstm_backward(
            grad, self.p, self._cache, self.spec.return_sequences
        )
        return dx

    def params(self):
        return {"w": self.p.w, "u": self.p.u, "b": self.p.b}

    def grads(self):
        return {"w": self.dw, "u": self.du, "b": self.db}

    def set_param(self, key, value):
        setattr(self.p, key, np.asarray(value, dtype=np.float64))


class BiLstmLayer(Layer):
    """spec.units is the total output width; each direction gets half."""

    def __init__(self, spec: LayerSpec, d_in: int, rng: np.random.Generator):
        if spec.units % 2 != 0:
            raise PipelineError("BAD_SPEC", "bilstm output width must be even")
        self.spec = spec
        half = spec.units // 2
        self.fwd = LstmParams.init(rng, d_in, half)
        self.bwd = LstmParams.init(rng, d_in, half)
        self._caches = None
        self.d_fwd = None
        self.d_bwd = None

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        seq = self.spec.return_sequences
        out_f, cache_f = _lstm_forward_cached(x, self.fwd, seq)
        out_b, cache_b = _lstm_forward_cached(x[:, ::-1, :], self.bwd, seq)
        self._caches = (cache_f, cache_b)
        if seq:
            return np.concatenate([out_f, out_b[:, ::-1, :]], axis=2)
        return np.concatenate([out_f, out_b], axis=1)

    def backward(self, grad):
        half = self.spec.units // 2
        seq = self.spec.return_sequences
        cache_f, cache_b = self._caches
        if seq:
            grad_f = grad[:, :, :half]
            grad_b = grad[:, ::-1, half:]
        else:
            grad_f = grad[:, :half]
            grad_b = grad[:, half:]
        dx_f, dwf, duf, dbf = _lstm_backward(grad_f, self.fwd, cache_f, seq)
        dx_b, dwb, dub, dbb = _lstm_backward(grad_b, self.bwd, cache_b, seq)
        self.d_fwd = (dwf, duf, dbf)
        self.d_bwd = (dwb, dub, dbb)
        return dx_f + dx_b[:, ::-1, :]

    def params(self):
        return {
            "fwd_w": self.fwd.w, "fwd_u": self.fwd.u, "fwd_b": self.fwd.b,
            "bwd_w": self.bwd.w, "bwd_u": self.bwd.u, "bwd_b": self.bwd.b,
        }

    def grads(self):
        dwf, duf, dbf = self.d_fwd
        dwb, dub, dbb = self.d_bwd
        return {
            "fwd_w": dwf, "fwd_u": duf, "fwd_b": dbf,
            "bwd_w": dwb, "bwd_u": dub, "bwd_b": dbb,
        }

    def set_param(self, key, value):
        direction, name = key.split("_")
        setattr(self.fwd if direction == "fwd" else self.bwd, name,
                np.asarray(value, dtype=np.float64))


class DropoutLayer(Layer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self._mask = None

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        if not training or self.spec.dropout_rate == 0.0:
            self._mask = None
            return x
        rate = self.spec.dropout_rate
        self._mask = (self.rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class FlattenLayer(Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self._shape = None

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Network:
    """A sequential stack with optional parallel dense heads at the end.

    With heads, forward returns [B, n_heads, head_units]; without, the last
    layer's output.
    """

    def __init__(self, layers: list[Layer], heads: list[DenseLayer] | None = None,
                 seed: int = 0):
        self.layers = layers
        self.heads = heads
        self.seed = seed

    def forward(self, x, training: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, training)
        if self.heads is None:
            return out
        return np.stack([h.forward(out, training) for h in self.heads], axis=1)

    def backward(self, grad: np.ndarray) -> None:
        if self.heads is not None:
            trunk_grad = None
            for idx, head in enumerate(self.heads):
                g = head.backward(grad[:, idx, :])
                trunk_grad = g if trunk_grad is None else trunk_grad + g
            grad = trunk_grad
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def _named_layers(self) -> list[tuple[str, Layer]]:
        named = []
        for i, layer in enumerate(self.layers):
            label = layer.spec.name or f"layer{i}"
            named.append((f"{i}.{label}", layer))
        if self.heads is not None:
            for j, head in enumerate(self.heads):
                named.append((f"head{j}.{head.spec.name or 'dense'}", head))
        return named

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, layer in self._named_layers():
            for key, value in layer.params().items():
                out.append((f"{prefix}.{key}", value))
        return out

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, layer in self._named_layers():
            for key, value in layer.grads().items():
                out.append((f"{prefix}.{key}", value))
        return out

    def set_parameter(self, path: str, value: np.ndarray) -> None:
        prefix, key = path.rsplit(".", 1)
        for name, layer in self._named_layers():
            if name == prefix:
                layer.set_param(key, value)
                return
        raise PipelineError("BAD_PARAM", f"no parameter {path}")

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.parameters()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            self.set_parameter(name, arr)


class Adam:
    """Keeps first/second-moment state per parameter path."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, net: Network) -> None:
        self.t += 1
        grads = dict(net.gradients())
        for name, param in net.parameters():
            grad = grads[name]
            if name not in self.state:
                self.state[name] = (np.zeros_like(param), np.zeros_like(param))
            m, v = self.state[name]
            new_param, m, v = adam_step(
                param, grad, m, v, self.t, self.lr, self.beta1, self.beta2, self.eps
            )
            self.state[name] = (m, v)
            net.set_parameter(name, new_param)


def grad_check(net: Network, x: np.ndarray, target: np.ndarray, kind: LossKind,
               delta: float = 1e-5, max_per_param: int | None = None,
               min_grad: float = 0.0) -> float:
    """Max relative error between backprop and central finite differences.

    Run with dropout inactive (training=False on both paths). When
    max_per_param is given, only the largest-magnitude analytic entries
    of each parameter tensor are probed: exhaustive probing of big stacks
    is intractable, and the difference quotient of a near-zero gradient
    sits below the float64 round-off floor of the loss, so comparing
    there measures noise, not backprop. min_grad skips entries whose
    analytic magnitude is below that floor entirely.
    """

    def compute_loss() -> float:
        return loss_and_grad(net.forward(x, training=False), target, kind)[0]

    value, dpred = loss_and_grad(net.forward(x, training=False), target, kind)
    net.backward(dpred)
    analytic = dict(net.gradients())

    worst = 0.0
    for name, param in net.parameters():
        flat = param.reshape(-1)
        n = flat.size
        an_flat = analytic[name].reshape(-1)
        if max_per_param is not None and n > max_per_param:
            idxs = np.argsort(-np.abs(an_flat), kind="stable")[:max_per_param]
        else:
            idxs = np.arange(n)
        if min_grad > 0.0:
            idxs = [i for i in idxs if abs(an_flat[i]) >= min_grad]
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + delta
            up = compute_loss()
            flat[idx] = orig - delta
            down = compute_loss()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * delta)
            a = an_flat[idx]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpointing: JSON manifest + little-endian float64 blob, layer order


def save_checkpoint(net: Network, stem) -> None:
    stem = str(stem)
    params = net.parameters()
    manifest = {
        "seed": net.seed,
        "layers": [layer.spec.to_json() for layer in net.layers],
        "heads": [h.spec.to_json() for h in net.heads] if net.heads is not None else None,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params],
    }
    try:
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        with open(stem + ".bin", "wb") as fh:
            for _, arr in params:
                fh.write(arr.astype("<f8").tobytes())
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot write checkpoint {stem}: {exc}") from exc


def load_checkpoint(stem, builder) -> Network:
    """Rebuild a network via `builder(layer_specs, head_specs, seed)` and load weights."""
    stem = str(stem)
    try:
        with open(stem + ".json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(stem + ".bin", "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise PipelineError("IO_ERROR", f"cannot read checkpoint {stem}: {exc}") from exc
    layer_specs = [LayerSpec.from_json(o) for o in manifest["layers"]]
    head_specs = (
        [LayerSpec.from_json(o) for o in manifest["heads"]]
        if manifest["heads"] is not None else None
    )
    net = builder(layer_specs, head_specs, manifest["seed"])
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        net.set_parameter(entry["name"], arr.copy())
        offset += count * 8
    if offset != len(blob):
        raise PipelineError("DIM_MISMATCH", f"checkpoint blob has {len(blob) - offset} stray bytes")
    return net
