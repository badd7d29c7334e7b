"""Core tensor ops against nested-loop and finite-difference oracles."""

import math

import numpy as np
import pytest

from conftest import (
    binomial_3sigma,
    check_gradients,
    conv_time_loop_oracle,
    matmul_loop_oracle,
    rand_tensor,
)
from tdsasr.rng import Rng
from tdsasr.tensor import (
    GRUParams,
    Tensor,
    backward,
    concat,
    conv2d_time,
    conv2d_time_batch,
    dropout,
    embedding,
    gru_cell,
    layer_norm_example,
    layer_norm_masked,
    linear,
    log_softmax,
    mean_,
    no_grad,
    relu,
    reshape,
    sigmoid,
    slice_last,
    softmax,
    stack,
    sum_,
    tanh,
)


class TestConv2dTime:
    def test_identity_kernel(self):
        # k=1, stride=1, identity channel mixing reproduces the input
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, (5, 2, 3)))
        w = Tensor(np.eye(3).reshape(1, 3, 3))
        b = Tensor(np.zeros(3))
        out = conv2d_time(x, w, b)
        np.testing.assert_allclose(out.data, x.data, atol=0)

    def test_parameter_count_kc2(self):
        # k=21, c=10 -> 21*10*10 learnable weights excluding bias
        k, c = 21, 10
        w = Tensor(np.zeros((k, c, c)))
        assert w.size == k * c * c == 2100

    def test_matches_loop_oracle(self, rng_np):
        x = rng_np.uniform(-1, 1, (6, 2, 3))
        w = rng_np.uniform(-1, 1, (3, 3, 4))
        b = rng_np.uniform(-1, 1, 4)
        out = conv2d_time(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
        expected = conv_time_loop_oracle(x, w, b, stride=1, padding=1)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,t", [(1, 0, 7), (2, 2, 9), (3, 1, 11)])
    def test_strided_matches_oracle(self, rng_np, stride, padding, t):
        x = rng_np.uniform(-1, 1, (t, 1, 2))
        w = rng_np.uniform(-1, 1, (5, 2, 3))
        b = rng_np.uniform(-1, 1, 3)
        out = conv2d_time(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        expected = conv_time_loop_oracle(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_batch_matches_single(self, rng_np):
        xs = rng_np.uniform(-1, 1, (3, 8, 2, 3))
        w = Tensor(rng_np.uniform(-1, 1, (3, 3, 3)))
        b = Tensor(rng_np.uniform(-1, 1, 3))
        batched = conv2d_time_batch(Tensor(xs), w, b, stride=2, padding=1)
        for i in range(3):
            single = conv2d_time(Tensor(xs[i]), w, b, stride=2, padding=1)
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)

    def test_too_short_input_raises(self):
        x = Tensor(np.zeros((2, 1, 1)))
        w = Tensor(np.zeros((5, 1, 1)))
        b = Tensor(np.zeros(1))
        with pytest.raises(ValueError):
            conv2d_time(x, w, b, stride=1, padding=0)

    def test_shape_mismatch_raises(self):
        x = Tensor(np.zeros((4, 1, 2)))
        w = Tensor(np.zeros((3, 3, 2)))
        with pytest.raises(ValueError):
            conv2d_time(x, w, Tensor(np.zeros(2)))

    def test_gradients(self, rng_np):
        x = rand_tensor(rng_np, (6, 2, 3))
        w = rand_tensor(rng_np, (3, 3, 2))
        b = rand_tensor(rng_np, (2,))
        check_gradients(lambda: sum_(conv2d_time(x, w, b, stride=2, padding=1)), [x, w, b])


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6, dtype=float).reshape(2, 3))
        out = linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, x.data)

    def test_hand_case(self):
        out = linear(Tensor([1.0, 2.0]), Tensor([[1.0, 0.0], [0.0, 2.0]]), Tensor([3.0, 3.0]))
        np.testing.assert_allclose(out.data, [4.0, 7.0])

    def test_matches_matmul_oracle(self, rng_np):
        x = rng_np.uniform(-1, 1, (2, 3, 4))
        w = rng_np.uniform(-1, 1, (4, 5))
        b = rng_np.uniform(-1, 1, 5)
        out = linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, matmul_loop_oracle(x, w, b), atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            linear(Tensor(np.zeros(3)), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))

    def test_gradients(self, rng_np):
        x = rand_tensor(rng_np, (3, 4))
        w = rand_tensor(rng_np, (4, 2))
        b = rand_tensor(rng_np, (2,))
        check_gradients(lambda: sum_(linear(x, w, b)), [x, w, b])


class TestRelu:
    def test_values(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_allclose(out.data, [0.0, 0.0, 2.0])

    def test_all_negative_blocks_gradient(self):
        x = Tensor([-1.0, -2.0], requires_grad=True)
        sum_(relu(x)).backward()
        np.testing.assert_allclose(x.grad, [0.0, 0.0])

    def test_gradients_at_nonzero_points(self, rng_np):
        x = rand_tensor(rng_np, (10,))
        x.data[np.abs(x.data) < 0.05] += 0.1  # keep away from the kink
        check_gradients(lambda: sum_(relu(x)), [x], rtol=1e-6)


class TestLayerNorm:
    def test_constant_input_zero_output(self):
        x = Tensor(np.full((3, 2, 2), 5.0))
        out = layer_norm_example(x, Tensor(1.0), Tensor(0.0), eps=1e-8)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-9)

    def test_mean_zero_var_one(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
        out = layer_norm_example(x, Tensor(1.0), Tensor(0.0), eps=1e-15)
        assert abs(out.data.mean()) < 1e-9
        assert abs(out.data.var() - 1.0) < 1e-9

    def test_default_eps_keeps_unit_variance(self, rng_np):
        x = Tensor(rng_np.uniform(-1, 1, (4, 2, 3)))
        out = layer_norm_example(x, Tensor(1.0), Tensor(0.0))
        assert abs(out.data.mean()) < 1e-9
        assert abs(out.data.var() - 1.0) < 1e-6

    def test_gradients(self, rng_np):
        x = rand_tensor(rng_np, (4, 2, 3))
        gain = Tensor(np.asarray(1.3), requires_grad=True)
        bias = Tensor(np.asarray(-0.2), requires_grad=True)
        check_gradients(
            lambda: sum_(mul_abs(layer_norm_example(x, gain, bias))), [x, gain, bias], rtol=1e-5
        )

    def test_masked_matches_unmasked_per_example(self, rng_np):
        xs = rng_np.uniform(-1, 1, (2, 6, 2, 2))
        lengths = [6, 4]
        xs[1, 4:] = 0.0
        mask = np.zeros((2, 6), dtype=bool)
        for i, n in enumerate(lengths):
            mask[i, :n] = True
        gain, bias = Tensor(np.asarray(1.1)), Tensor(np.asarray(0.3))
        out = layer_norm_masked(Tensor(xs), gain, bias, mask, eps=1e-8)
        for i, n in enumerate(lengths):
            ref = layer_norm_example(Tensor(xs[i, :n]), gain, bias, eps=1e-8)
            np.testing.assert_allclose(out.data[i, :n], ref.data, atol=1e-12)
            np.testing.assert_allclose(out.data[i, n:], 0.0, atol=0)

    def test_masked_gradients(self, rng_np):
        x = rand_tensor(rng_np, (2, 5, 3))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
        gain = Tensor(np.asarray(0.9), requires_grad=True)
        bias = Tensor(np.asarray(0.1), requires_grad=True)
        # zero the padded region so the loss only sees valid frames
        x.data[1, 3:] = 0.0
        check_gradients(
            lambda: sum_(mul_abs(layer_norm_masked(x, gain, bias, mask))),
            [x, gain, bias],
            rtol=1e-5,
        )


def mul_abs(t):
    # squash through a second op so LN gradients are not trivially uniform
    return tanh(t)


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(Tensor(np.zeros(7)))
        np.testing.assert_allclose(out.data, np.full(7, 1 / 7), atol=1e-12)

    def test_closed_form(self):
        out = softmax(Tensor([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_shift_invariance(self, rng_np):
        x = rng_np.uniform(-5, 5, (3, 4))
        a = softmax(Tensor(x), axis=-1)
        b = softmax(Tensor(x + 123.456), axis=-1)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_rows_sum_to_one(self, rng_np):
        x = rng_np.uniform(-50, 50, (5, 9))
        out = softmax(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(out.data >= 0)

    def test_extreme_logits_stable(self):
        out = softmax(Tensor([1e5, 0.0, -1e5]))
        assert np.all(np.isfinite(out.data))

    def test_gradients(self, rng_np):
        x = rand_tensor(rng_np, (2, 5))
        w = Tensor(rng_np.uniform(-1, 1, (2, 5)))
        check_gradients(lambda: sum_(softmax(x, axis=-1) * w), [x], rtol=1e-5)

    def test_log_softmax_gradients(self, rng_np):
        x = rand_tensor(rng_np, (3, 4))
        w = Tensor(rng_np.uniform(-1, 1, (3, 4)))
        check_gradients(lambda: sum_(log_softmax(x, axis=-1) * w), [x], rtol=1e-5)


class TestGruCell:
    def _params(self, rng, n_in, n_h):
        def t(*shape):
            return rand_tensor(rng, shape, scale=0.5)

        return GRUParams(
            w_z=t(n_in, n_h), u_z=t(n_h, n_h), b_z=t(n_h),
            w_r=t(n_in, n_h), u_r=t(n_h, n_h), b_r=t(n_h),
            w_h=t(n_in, n_h), u_h=t(n_h, n_h), b_h=t(n_h),
        )

    def test_saturated_update_gate_keeps_state(self, rng_np):
        p = self._params(rng_np, 3, 4)
        p.b_z.data[:] = -1e9  # z -> 0 so h == h_prev
        x = Tensor(rng_np.uniform(-1, 1, 3))
        h = Tensor(rng_np.uniform(-1, 1, 4))
        out = gru_cell(x, h, p)
        np.testing.assert_allclose(out.data, h.data, atol=1e-12)

    def test_zero_everything_gives_zero(self, rng_np):
        p = self._params(rng_np, 3, 4)
        p.b_z.data[:] = 0.0
        p.b_r.data[:] = 0.0
        p.b_h.data[:] = 0.0
        out = gru_cell(Tensor(np.zeros(3)), Tensor(np.zeros(4)), p)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_batched_matches_loop(self, rng_np):
        p = self._params(rng_np, 3, 4)
        xs = rng_np.uniform(-1, 1, (5, 3))
        hs = rng_np.uniform(-1, 1, (5, 4))
        batched = gru_cell(Tensor(xs), Tensor(hs), p)
        for i in range(5):
            single = gru_cell(Tensor(xs[i]), Tensor(hs[i]), p)
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)

    def test_gradients_all_inputs(self, rng_np):
        p = self._params(rng_np, 2, 3)
        x = rand_tensor(rng_np, (2,))
        h = rand_tensor(rng_np, (3,))
        params = [x, h] + list(p.tensors().values())
        check_gradients(lambda: sum_(gru_cell(x, h, p)), params, rtol=1e-5)


class TestDropout:
    def test_p_zero_identity(self):
        x = Tensor(np.ones(10))
        out = dropout(x, 0.0, Rng(1), training=True)
        np.testing.assert_allclose(out.data, x.data)

    def test_inference_identity(self):
        x = Tensor(np.ones(10))
        out = dropout(x, 0.9, Rng(1), training=False)
        np.testing.assert_allclose(out.data, x.data)

    def test_zero_fraction_within_3sigma(self):
        n, p = 100_000, 0.2
        out = dropout(Tensor(np.ones(n)), p, Rng(7), training=True)
        frac = float((out.data == 0).mean())
        assert abs(frac - p) < binomial_3sigma(n, p)

    def test_survivors_scaled(self):
        out = dropout(Tensor(np.ones(1000)), 0.5, Rng(3), training=True)
        kept = out.data[out.data != 0]
        np.testing.assert_allclose(kept, 2.0)

    def test_same_seed_same_mask(self):
        x = Tensor(np.ones(500))
        a = dropout(x, 0.3, Rng(42), training=True)
        b = dropout(x, 0.3, Rng(42), training=True)
        np.testing.assert_array_equal(a.data, b.data)

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), 1.0, Rng(0), training=True)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        sum_(x).backward()
        np.testing.assert_allclose(x.grad, np.ones(4))

    def test_quadratic_closed_form(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        sum_(x * x).backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_repeated_backward_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        loss = sum_(x * x)
        loss.backward()
        loss.backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_non_scalar_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_no_grad_blocks_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = sum_(x * x)
        assert not y.requires_grad
        assert y._inputs == ()

    def test_shared_subexpression(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        sum_(y + y).backward()  # d/dx of 2x^2 = 4x
        np.testing.assert_allclose(x.grad, [8.0])

    def test_nan_rejected(self):
        big = Tensor([1e308])
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            big + big  # overflow to inf


class TestShapeOps:
    def test_concat_and_slice_roundtrip(self, rng_np):
        a = rand_tensor(rng_np, (3, 2))
        b = rand_tensor(rng_np, (3, 4))
        joined = concat([a, b], axis=-1)
        np.testing.assert_allclose(slice_last(joined, 0, 2).data, a.data)
        np.testing.assert_allclose(slice_last(joined, 2, 6).data, b.data)

    def test_concat_gradients(self, rng_np):
        a = rand_tensor(rng_np, (2, 2))
        b = rand_tensor(rng_np, (2, 3))
        w = Tensor(rng_np.uniform(-1, 1, (2, 5)))
        check_gradients(lambda: sum_(concat([a, b], axis=-1) * w), [a, b])

    def test_stack_gradients(self, rng_np):
        rows = [rand_tensor(rng_np, (3,)) for _ in range(4)]
        w = Tensor(rng_np.uniform(-1, 1, (4, 3)))
        check_gradients(lambda: sum_(stack(rows) * w), rows)

    def test_slice_gradients(self, rng_np):
        a = rand_tensor(rng_np, (3, 6))
        check_gradients(lambda: sum_(slice_last(a, 1, 4)), [a])

    def test_reshape_gradients(self, rng_np):
        a = rand_tensor(rng_np, (2, 6))
        check_gradients(lambda: sum_(tanh(reshape(a, (3, 4)))), [a])

    def test_embedding_lookup_and_grad(self, rng_np):
        table = rand_tensor(rng_np, (5, 3))
        out = embedding(table, [1, 1, 4])
        np.testing.assert_allclose(out.data[0], table.data[1])
        sum_(out).backward()
        expected = np.zeros((5, 3))
        expected[1] = 2.0
        expected[4] = 1.0
        np.testing.assert_allclose(table.grad, expected)

    def test_embedding_out_of_range(self, rng_np):
        table = rand_tensor(rng_np, (5, 3))
        with pytest.raises(IndexError):
            embedding(table, [5])


class TestActivationGradients:
    @pytest.mark.parametrize("fn", [sigmoid, tanh])
    def test_matches_finite_differences(self, rng_np, fn):
        x = rand_tensor(rng_np, (7,), scale=2.0)
        check_gradients(lambda: sum_(fn(x)), [x], rtol=1e-6)

    def test_sigmoid_extreme_inputs(self):
        out = sigmoid(Tensor([-1e6, 0.0, 1e6]))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0], atol=1e-12)
