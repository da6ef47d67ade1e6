"""Numerical core: layers, losses, Adam, gradient checking, checkpoints.

Gradient correctness is the load-bearing property here; every layer kind
and both losses are checked against central finite differences.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boldts.autodiff import (
    Activation,
    Adam,
    BiLstmLayer,
    LayerKind,
    LayerSpec,
    LossKind,
    LstmParams,
    Network,
    PROB_EPS,
    adam_step,
    bilstm_forward,
    dense_forward,
    dropout,
    glorot_uniform,
    grad_check,
    load_checkpoint,
    loss,
    loss_and_grad,
    lstm_forward,
    save_checkpoint,
    sigmoid,
    softmax,
)
from boldts.core import PipelineError
from boldts.models import build_from_specs

# single-step recurrence with unit weights, zero bias, x = [1]:
# i = f = o = sigmoid(1), g = tanh(1), c = i*g, h = o*tanh(c)
SIG1 = 1.0 / (1.0 + math.exp(-1.0))
TANH1 = math.tanh(1.0)
HAND_C = SIG1 * TANH1
HAND_H = SIG1 * math.tanh(HAND_C)


class TestLayerSpec:
    def test_bad_dropout_rate(self):
        for rate in (1.0, -0.1, 1.5):
            with pytest.raises(PipelineError) as err:
                LayerSpec(LayerKind.DROPOUT, dropout_rate=rate)
            assert err.value.code == "BAD_RATE"

    def test_units_required_for_parametric_kinds(self):
        for kind in (LayerKind.DENSE, LayerKind.LSTM, LayerKind.BILSTM):
            with pytest.raises(PipelineError) as err:
                LayerSpec(kind, units=0)
            assert err.value.code == "BAD_SPEC"

    def test_odd_bilstm_width_rejected_at_build(self):
        spec = LayerSpec(LayerKind.BILSTM, units=3)
        with pytest.raises(PipelineError) as err:
            BiLstmLayer(spec, d_in=2, rng=np.random.default_rng(0))
        assert err.value.code == "BAD_SPEC"

    def test_json_round_trip(self):
        spec = LayerSpec(
            LayerKind.LSTM, units=8, activation=Activation.NONE,
            return_sequences=True, name="rec1",
        )
        assert LayerSpec.from_json(spec.to_json()) == spec


class TestActivations:
    def test_sigmoid_midpoint_and_limits(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        assert sigmoid(np.array([-800.0]))[0] == 0.0
        assert sigmoid(np.array([800.0]))[0] == 1.0

    def test_softmax_rows_sum_to_one(self):
        z = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.1, 999.9]])
        p = softmax(z)
        assert np.all(np.isfinite(p))
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_shift_invariance(self):
        z = np.array([0.3, -1.2, 2.0])
        assert np.allclose(softmax(z), softmax(z + 57.0), atol=1e-12)


class TestDense:
    def test_identity_weights(self):
        x = np.array([[1.0, 2.0]])
        w = np.eye(2)
        b = np.array([1.0, -1.0])
        assert np.array_equal(dense_forward(x, w, b), [[2.0, 1.0]])

    def test_relu_clips_negative(self):
        out = dense_forward(np.array([[1.0]]), np.array([[-3.0]]), np.array([0.0]),
                            Activation.RELU)
        assert out[0, 0] == 0.0

    def test_sequence_input_is_per_timestep(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 5, 3))
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        out = dense_forward(x, w, b, Activation.TANH)
        for t in range(5):
            assert np.allclose(out[:, t, :], dense_forward(x[:, t, :], w, b, Activation.TANH))

    def test_shape_mismatch(self):
        with pytest.raises(PipelineError) as err:
            dense_forward(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2))
        assert err.value.code == "SHAPE_MISMATCH"


def unit_params():
    return LstmParams(w=np.ones((1, 4)), u=np.ones((1, 4)), b=np.zeros(4))


class TestLstm:
    def test_single_step_hand_values(self):
        out = lstm_forward(np.array([[1.0]]), unit_params())
        assert out.shape == (1,)
        assert out[0] == pytest.approx(HAND_H, abs=1e-12)
        assert HAND_C == pytest.approx(0.55677, abs=1e-5)
        # o * tanh(c) evaluates to ~0.36961 for these gate values
        assert HAND_H == pytest.approx(0.3696063529, abs=1e-9)

    def test_zero_input_zero_bias_stays_silent(self):
        rng = np.random.default_rng(3)
        p = LstmParams(
            w=rng.standard_normal((2, 12)), u=rng.standard_normal((3, 12)), b=np.zeros(12)
        )
        out = lstm_forward(np.zeros((6, 2)), p, return_sequences=True)
        assert np.array_equal(out, np.zeros((6, 3)))

    def test_return_sequences_last_row_matches_final_state(self):
        rng = np.random.default_rng(4)
        p = LstmParams.init(rng, d_in=2, units=3)
        x = rng.standard_normal((5, 2))
        seq = lstm_forward(x, p, return_sequences=True)
        last = lstm_forward(x, p, return_sequences=False)
        assert seq.shape == (5, 3)
        assert np.array_equal(seq[-1], last)

    def test_batched_and_single_agree(self):
        rng = np.random.default_rng(5)
        p = LstmParams.init(rng, d_in=2, units=4)
        x = rng.standard_normal((3, 6, 2))
        batched = lstm_forward(x, p, return_sequences=True)
        for b in range(3):
            assert np.allclose(batched[b], lstm_forward(x[b], p, return_sequences=True))

    def test_param_shape_validation(self):
        with pytest.raises(PipelineError) as err:
            LstmParams(w=np.ones((2, 8)), u=np.ones((3, 8)), b=np.zeros(8))
        assert err.value.code == "SHAPE_MISMATCH"

    def test_input_width_validation(self):
        p = LstmParams.init(np.random.default_rng(0), d_in=2, units=2)
        with pytest.raises(PipelineError) as err:
            lstm_forward(np.ones((4, 3)), p)
        assert err.value.code == "SHAPE_MISMATCH"


class TestBiLstm:
    def test_output_width_doubles(self):
        rng = np.random.default_rng(6)
        a = LstmParams.init(rng, 2, 3)
        b = LstmParams.init(rng, 2, 3)
        x = rng.standard_normal((5, 2))
        assert bilstm_forward(x, a, b).shape == (6,)
        assert bilstm_forward(x, a, b, return_sequences=True).shape == (5, 6)

    def test_palindrome_halves_mirror(self):
        rng = np.random.default_rng(7)
        p = LstmParams.init(rng, 2, 3)
        row = rng.standard_normal(2)
        mid = rng.standard_normal(2)
        x = np.stack([row, mid, row])  # x == x[::-1]
        out = bilstm_forward(x, p, p, return_sequences=True)
        for t in range(3):
            assert np.allclose(out[t, 3:], out[2 - t, :3], atol=1e-12)

    def test_time_reversal_swaps_halves(self):
        rng = np.random.default_rng(8)
        a = LstmParams.init(rng, 2, 3)
        b = LstmParams.init(rng, 2, 3)
        x = rng.standard_normal((4, 2))
        fwd = bilstm_forward(x, a, b)
        rev = bilstm_forward(x[::-1], b, a)
        assert np.allclose(fwd[:3], rev[3:], atol=1e-12)
        assert np.allclose(fwd[3:], rev[:3], atol=1e-12)


class TestDropout:
    def test_inference_is_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        out = dropout(x, 0.5, training=False, rng=np.random.default_rng(0))
        assert np.array_equal(out, x)

    def test_rate_zero_is_identity(self):
        x = np.ones((2, 2))
        out = dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
        assert np.array_equal(out, x)

    def test_inverted_scaling_statistics(self):
        rng = np.random.default_rng(11)
        x = np.ones(200_000)
        out = dropout(x, 0.3, training=True, rng=rng)
        zero_fraction = float(np.mean(out == 0.0))
        assert abs(zero_fraction - 0.3) < 0.01
        survivors = out[out != 0.0]
        assert np.allclose(survivors, 1.0 / 0.7, atol=1e-12)
        assert abs(out.mean() - 1.0) < 0.01

    def test_bad_rate(self):
        with pytest.raises(PipelineError) as err:
            dropout(np.ones(3), 1.0, training=True, rng=np.random.default_rng(0))
        assert err.value.code == "BAD_RATE"


class TestLosses:
    def test_bce_hand_value(self):
        assert loss([0.5], [1.0], LossKind.BCE) == pytest.approx(math.log(2.0), abs=1e-9)

    def test_bce_symmetry(self):
        assert loss([0.2], [0.0], LossKind.BCE) == pytest.approx(
            loss([0.8], [1.0], LossKind.BCE), abs=1e-12
        )

    def test_cce_one_hot(self):
        value = loss([[0.1, 0.7, 0.2]], [[0.0, 1.0, 0.0]], LossKind.CCE)
        assert value == pytest.approx(-math.log(0.7), abs=1e-12)

    def test_cce_averages_over_samples(self):
        pred = [[0.5, 0.5], [0.25, 0.75]]
        target = [[1.0, 0.0], [0.0, 1.0]]
        expected = (-math.log(0.5) - math.log(0.75)) / 2.0
        assert loss(pred, target, LossKind.CCE) == pytest.approx(expected, abs=1e-12)

    def test_clamping_keeps_loss_finite_and_grad_zero(self):
        value, grad = loss_and_grad([0.0, 1.0], [1.0, 0.0], LossKind.BCE)
        assert np.isfinite(value)
        assert value == pytest.approx(-math.log(PROB_EPS), abs=1e-6)
        assert np.array_equal(grad, [0.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(PipelineError) as err:
            loss_and_grad(np.ones(3), np.ones(4), LossKind.BCE)
        assert err.value.code == "SHAPE_MISMATCH"

    @given(
        kind=st.sampled_from([LossKind.BCE, LossKind.CCE]),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=30)
    def test_grad_matches_finite_difference(self, kind, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0.1, 0.9, size=(2, 3))
        target = np.zeros((2, 3))
        target[0, rng.integers(3)] = 1.0
        target[1, rng.integers(3)] = 1.0
        _, grad = loss_and_grad(pred, target, kind)
        eps = 1e-6
        for i in range(2):
            for j in range(3):
                bumped = pred.copy()
                bumped[i, j] += eps
                up = loss(bumped, target, kind)
                bumped[i, j] -= 2 * eps
                down = loss(bumped, target, kind)
                numeric = (up - down) / (2 * eps)
                assert grad[i, j] == pytest.approx(numeric, abs=1e-6)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        param, m, v = (np.array([0.5]), np.zeros(1), np.zeros(1))
        new_param, m, v = adam_step(param, np.array([1.0]), m, v, t=1, lr=0.001)
        assert new_param[0] == pytest.approx(0.499, abs=1e-9)

    @given(g=st.floats(1e-3, 1e6))
    @settings(max_examples=30)
    def test_first_step_invariant_to_gradient_scale(self, g):
        param = np.array([0.0])
        new_param, _, _ = adam_step(
            param, np.array([g]), np.zeros(1), np.zeros(1), t=1, lr=0.01
        )
        # the eps in the denominator shifts the step by at most eps/|g| relative
        assert new_param[0] == pytest.approx(-0.01, rel=1e-4)

    def test_zero_step_index_rejected(self):
        with pytest.raises(PipelineError) as err:
            adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), t=0, lr=0.1)
        assert err.value.code == "BAD_STEP"

    def test_state_shape_mismatch(self):
        with pytest.raises(PipelineError) as err:
            adam_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), t=1, lr=0.1)
        assert err.value.code == "STATE_SHAPE_MISMATCH"

    def test_optimizer_descends_on_simple_objective(self):
        net = build_from_specs(
            [LayerSpec(LayerKind.DENSE, 1, Activation.SIGMOID, name="out")],
            None, seed=0, input_len=1, input_dim=2,
        )
        x = np.array([[1.0, -0.5], [0.3, 0.8]])
        y = np.array([[1.0], [0.0]])
        opt = Adam(lr=0.05)
        losses = []
        for _ in range(25):
            value, dpred = loss_and_grad(net.forward(x, training=True), y, LossKind.BCE)
            losses.append(value)
            net.backward(dpred)
            opt.step(net)
        assert opt.t == 25
        assert losses[-1] < losses[0]


def net_and_data(layer_specs, head_specs, *, input_len, input_dim, batch, target_shape,
                 seed=12):
    net = build_from_specs(layer_specs, head_specs, seed, input_len, input_dim)
    rng = np.random.default_rng(seed + 100)
    if input_len > 1 or any(
        s.kind in (LayerKind.LSTM, LayerKind.BILSTM, LayerKind.FLATTEN)
        for s in layer_specs
    ):
        x = rng.standard_normal((batch, input_len, input_dim))
    else:
        x = rng.standard_normal((batch, input_dim))
    target = np.zeros(target_shape)
    flat = target.reshape(target.shape[0], -1)
    for i in range(target.shape[0]):
        flat[i, rng.integers(flat.shape[1])] = 1.0
    return net, x, target


class TestGradCheck:
    def test_dense_softmax_cce(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.DENSE, 5, Activation.TANH, name="hidden"),
                LayerSpec(LayerKind.DENSE, 3, Activation.SOFTMAX, name="out"),
            ],
            None, input_len=1, input_dim=4, batch=4, target_shape=(4, 3),
        )
        assert grad_check(net, x, y, LossKind.CCE) < 1e-6

    def test_dense_relu_sigmoid_bce(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.DENSE, 6, Activation.RELU, name="hidden"),
                LayerSpec(LayerKind.DENSE, 2, Activation.SIGMOID, name="out"),
            ],
            None, input_len=1, input_dim=3, batch=4, target_shape=(4, 2),
        )
        assert grad_check(net, x, y, LossKind.BCE) < 1e-6

    def test_lstm_final_state_cce(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.LSTM, 4, name="rec"),
                LayerSpec(LayerKind.DENSE, 3, Activation.SOFTMAX, name="out"),
            ],
            None, input_len=5, input_dim=2, batch=3, target_shape=(3, 3),
        )
        assert grad_check(net, x, y, LossKind.CCE) < 1e-6

    def test_lstm_sequence_flatten_bce(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.LSTM, 3, return_sequences=True, name="rec"),
                LayerSpec(LayerKind.FLATTEN, name="flatten"),
                LayerSpec(LayerKind.DENSE, 2, Activation.SIGMOID, name="out"),
            ],
            None, input_len=4, input_dim=2, batch=2, target_shape=(2, 2),
        )
        assert grad_check(net, x, y, LossKind.BCE) < 1e-6

    def test_bilstm_final_state_cce(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.BILSTM, 4, name="rec"),
                LayerSpec(LayerKind.DENSE, 3, Activation.SOFTMAX, name="out"),
            ],
            None, input_len=4, input_dim=2, batch=3, target_shape=(3, 3),
        )
        assert grad_check(net, x, y, LossKind.CCE) < 1e-6

    def test_bilstm_sequence_flatten_bce(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.BILSTM, 4, return_sequences=True, name="rec"),
                LayerSpec(LayerKind.FLATTEN, name="flatten"),
                LayerSpec(LayerKind.DENSE, 2, Activation.SIGMOID, name="out"),
            ],
            None, input_len=3, input_dim=2, batch=2, target_shape=(2, 2),
        )
        assert grad_check(net, x, y, LossKind.BCE) < 1e-6

    def test_dropout_layer_inert_during_check(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.DENSE, 5, Activation.TANH, name="hidden"),
                LayerSpec(LayerKind.DROPOUT, dropout_rate=0.5, name="drop"),
                LayerSpec(LayerKind.DENSE, 2, Activation.SOFTMAX, name="out"),
            ],
            None, input_len=1, input_dim=3, batch=3, target_shape=(3, 2),
        )
        assert grad_check(net, x, y, LossKind.CCE) < 1e-6

    def test_multi_head_bce(self):
        heads = [
            LayerSpec(LayerKind.DENSE, 3, Activation.SIGMOID, name=f"head{i}")
            for i in range(2)
        ]
        net, x, y = net_and_data(
            [LayerSpec(LayerKind.DENSE, 4, Activation.TANH, name="trunk")],
            heads, input_len=1, input_dim=3, batch=2, target_shape=(2, 2, 3),
        )
        assert net.forward(x).shape == (2, 2, 3)
        assert grad_check(net, x, y, LossKind.BCE) < 1e-6


class TestNetwork:
    def small_specs(self):
        return [
            LayerSpec(LayerKind.DENSE, 3, Activation.TANH, name="a"),
            LayerSpec(LayerKind.LSTM, 2, name="b"),
        ]

    def test_same_seed_same_parameters(self):
        n1 = build_from_specs(self.small_specs(), None, 7, input_len=4, input_dim=2)
        n2 = build_from_specs(self.small_specs(), None, 7, input_len=4, input_dim=2)
        for (name1, p1), (name2, p2) in zip(n1.parameters(), n2.parameters()):
            assert name1 == name2
            assert np.array_equal(p1, p2)

    def test_different_seed_different_parameters(self):
        n1 = build_from_specs(self.small_specs(), None, 7, input_len=4, input_dim=2)
        n2 = build_from_specs(self.small_specs(), None, 8, input_len=4, input_dim=2)
        assert any(
            not np.array_equal(p1, p2)
            for (_, p1), (_, p2) in zip(n1.parameters(), n2.parameters())
        )

    def test_state_round_trip(self):
        net = build_from_specs(self.small_specs(), None, 7, input_len=4, input_dim=2)
        x = np.random.default_rng(0).standard_normal((2, 4, 2))
        before = net.forward(x)
        state = net.get_state()
        net.set_state({k: v * 0.0 for k, v in state.items()})
        assert not np.allclose(net.forward(x), before)
        net.set_state(state)
        assert np.array_equal(net.forward(x), before)

    def test_unknown_parameter_path(self):
        net = build_from_specs(self.small_specs(), None, 7, input_len=4, input_dim=2)
        with pytest.raises(PipelineError) as err:
            net.set_parameter("no.such.param", np.zeros(1))
        assert err.value.code == "BAD_PARAM"

    def test_gradient_names_align_with_parameters(self):
        net, x, y = net_and_data(
            [
                LayerSpec(LayerKind.LSTM, 2, name="rec"),
                LayerSpec(LayerKind.DENSE, 2, Activation.SOFTMAX, name="out"),
            ],
            None, input_len=3, input_dim=2, batch=2, target_shape=(2, 2),
        )
        _, dpred = loss_and_grad(net.forward(x), y, LossKind.CCE)
        net.backward(dpred)
        param_names = [name for name, _ in net.parameters()]
        grad_names = [name for name, _ in net.gradients()]
        assert param_names == grad_names
        for (_, p), (_, g) in zip(net.parameters(), net.gradients()):
            assert p.shape == g.shape


class TestCheckpoint:
    def build(self, seed=5):
        specs = [
            LayerSpec(LayerKind.DENSE, 3, Activation.TANH, name="a"),
            LayerSpec(LayerKind.BILSTM, 4, name="b"),
            LayerSpec(LayerKind.DENSE, 2, Activation.SOFTMAX, name="out"),
        ]
        return build_from_specs(specs, None, seed, input_len=4, input_dim=2)

    def builder(self, layer_specs, head_specs, seed):
        return build_from_specs(layer_specs, head_specs, seed, input_len=4, input_dim=2)

    def test_round_trip_preserves_outputs(self, tmp_path):
        net = self.build()
        stem = tmp_path / "ckpt"
        save_checkpoint(net, stem)
        loaded = load_checkpoint(stem, self.builder)
        x = np.random.default_rng(1).standard_normal((3, 4, 2))
        assert np.array_equal(loaded.forward(x), net.forward(x))

    def test_stray_bytes_rejected(self, tmp_path):
        net = self.build()
        stem = tmp_path / "ckpt"
        save_checkpoint(net, stem)
        blob_path = tmp_path / "ckpt.bin"
        blob_path.write_bytes(blob_path.read_bytes() + b"\x00" * 8)
        with pytest.raises(PipelineError) as err:
            load_checkpoint(stem, self.builder)
        assert err.value.code == "DIM_MISMATCH"

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(PipelineError) as err:
            load_checkpoint(tmp_path / "missing", self.builder)
        assert err.value.code == "IO_ERROR"


class TestGlorot:
    def test_bounds_and_determinism(self):
        limit = math.sqrt(6.0 / (10 + 20))
        a = glorot_uniform(np.random.default_rng(3), (10, 20), 10, 20)
        b = glorot_uniform(np.random.default_rng(3), (10, 20), 10, 20)
        assert np.array_equal(a, b)
        assert np.all(np.abs(a) <= limit)
