"""Forward semantics of the tensor ops against hand values and loop oracles."""

import numpy as np
import pytest

from fusionforge.tensor import (
    ConfigError,
    RunningStats,
    ShapeError,
    Tensor,
    absolute,
    add,
    backward,
    batch_norm2d,
    clamp,
    conv2d,
    conv_transpose2d,
    fully_connected,
    log,
    mean,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    square,
    subtract,
    tv_norm,
)

from oracles import (
    batchnorm_train_oracle,
    conv2d_oracle,
    conv_matrix_oracle,
    fully_connected_oracle,
    tv_oracle,
)


def rand(*shape, seed=0):
    return np.random.default_rng(seed).random(shape)


class TestTensorBasics:
    def test_lower_rank_data_gets_size_one_axes(self):
        assert Tensor(3.0).shape == (1, 1, 1, 1)
        assert Tensor([1.0, 2.0, 3.0]).shape == (1, 1, 1, 3)
        assert Tensor(np.zeros((5, 7))).shape == (1, 1, 5, 7)

    def test_rank_above_four_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_shape_matches_buffer_length(self):
        t = Tensor(rand(2, 3, 4, 5))
        assert np.prod(t.shape) == t.data.size

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TestElementwise:
    def test_add_zeros_is_identity(self):
        x = rand(1, 2, 3, 3)
        out = add(Tensor(x), Tensor(np.zeros_like(x)))
        np.testing.assert_array_equal(out.data, x)

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2))))

    def test_mean_value(self):
        assert mean(Tensor([1.0, 2.0, 3.0, 6.0])).item() == 3.0

    def test_mean_square_gradient_is_2x_over_n(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward(mean(square(x)))
        np.testing.assert_allclose(x.grad.reshape(-1), [1.0, 2.0])

    def test_subtract_and_scale(self):
        x, y = rand(1, 1, 2, 2, seed=1), rand(1, 1, 2, 2, seed=2)
        np.testing.assert_allclose(subtract(Tensor(x), Tensor(y)).data, x - y)
        np.testing.assert_allclose(scale(Tensor(x), -2.5).data, -2.5 * x)

    def test_absolute_matches_numpy(self):
        x = rand(1, 1, 3, 3) - 0.5
        np.testing.assert_array_equal(absolute(Tensor(x)).data, np.abs(x))

    def test_log_rejects_non_positive(self):
        with pytest.raises(ValueError):
            log(Tensor([0.5, 0.0]))

    def test_log_values(self):
        x = rand(1, 1, 2, 2) + 0.1
        np.testing.assert_allclose(log(Tensor(x)).data, np.log(x))

    def test_clamp(self):
        out = clamp(Tensor([-1.0, 0.3, 2.0]), 0.0, 1.0)
        np.testing.assert_array_equal(out.data.reshape(-1), [0.0, 0.3, 1.0])

    def test_operator_sugar(self):
        x = Tensor([1.0, 2.0])
        out = 1.0 - x * 2.0
        np.testing.assert_allclose(out.data.reshape(-1), [-1.0, -3.0])

    def test_finite_outputs_on_finite_inputs(self):
        x = Tensor(rand(2, 3, 4, 4, seed=9) * 1000 - 500)
        for op in (relu, sigmoid, absolute, square):
            assert np.all(np.isfinite(op(x).data))


class TestActivations:
    def test_relu_table(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data.reshape(-1), [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5

    def test_sigmoid_saturation_no_nan(self):
        out = sigmoid(Tensor([-500.0, 500.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data.reshape(-1), [0.0, 1.0], atol=1e-200)


class TestBackward:
    def test_mean_gradient(self):
        x = Tensor(np.ones(4), requires_grad=True)
        backward(mean(x))
        np.testing.assert_allclose(x.grad.reshape(-1), [0.25] * 4)

    def test_fanout_doubles_gradient(self):
        x = Tensor(np.ones(3), requires_grad=True)
        backward(mean(add(x, x)))
        np.testing.assert_allclose(x.grad.reshape(-1), [2.0 / 3.0] * 3)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(add(x, x))

    def test_no_grad_suppresses_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = mean(square(x))
        assert not out.requires_grad

    def test_shared_buffer_parents_do_not_alias(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = Tensor(np.ones((1, 1, 2, 2)) * 2, requires_grad=True)
        backward(mean(add(add(x, y), add(x, y))))
        np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 0.5))
        np.testing.assert_allclose(y.grad, np.full((1, 1, 2, 2), 0.5))


class TestConv2d:
    def test_identity_kernel(self):
        x = rand(1, 1, 4, 4)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), stride=1, padding=1)
        np.testing.assert_allclose(out.data, x)

    def test_zero_input_zero_bias(self):
        w = rand(3, 2, 3, 3, seed=5)
        out = conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(w), Tensor(np.zeros(3)),
                     stride=1, padding=1)
        np.testing.assert_array_equal(out.data, 0.0)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_sliding_window_oracle(self, stride, padding):
        x = rand(1, 2, 5, 5, seed=11)
        w = rand(3, 2, 3, 3, seed=12) - 0.5
        b = rand(3, seed=13)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        expected = conv2d_oracle(x, w, b, stride, padding)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 2, 3, 3))),
                   Tensor(np.zeros(2)))

    def test_non_positive_output_extent_raises(self):
        with pytest.raises(ConfigError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))),
                   Tensor(np.zeros(1)), stride=1, padding=0)

    def test_pointwise_fast_path_matches_oracle(self):
        x = rand(2, 3, 4, 4, seed=21)
        w = rand(5, 3, 1, 1, seed=22) - 0.5
        b = rand(5, seed=23)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b, 1, 0), atol=1e-12)


class TestConvTranspose2d:
    def test_non_overlapping_scatter_of_ones(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = conv_transpose2d(x, w, Tensor(np.zeros(1)), stride=2, padding=0)
        assert out.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(out.data, np.ones((1, 1, 4, 4)))

    def test_zero_input(self):
        w = rand(2, 3, 3, 3, seed=31)
        out = conv_transpose2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(w),
                               Tensor(np.zeros(3)), stride=2, padding=1,
                               output_padding=1)
        np.testing.assert_array_equal(out.data, 0.0)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (2, 1), (3, 1)])
    def test_matches_explicit_adjoint_matrix(self, stride, padding):
        # conv weight (C_out, C_in, k, k); the same buffer drives the
        # transpose with its (C_in_t, C_out_t) axes swapped by convention.
        c_out, c_in, k = 3, 2, 3
        in_shape = (1, c_in, 6, 6)
        w = rand(c_out, c_in, k, k, seed=41) - 0.5
        mat = conv_matrix_oracle(w, in_shape, stride, padding)
        ho = (6 + 2 * padding - k) // stride + 1
        y = rand(1, c_out, ho, ho, seed=42)
        out_pad = 6 - ((ho - 1) * stride - 2 * padding + k)
        got = conv_transpose2d(Tensor(y), Tensor(w), Tensor(np.zeros(c_in)),
                               stride=stride, padding=padding,
                               output_padding=out_pad)
        expected = (mat.T @ y.reshape(-1)).reshape(in_shape)
        np.testing.assert_allclose(got.data, expected, atol=1e-12)

    def test_restores_conv_spatial_extent(self):
        x = rand(1, 2, 8, 8, seed=43)
        w = rand(4, 2, 3, 3, seed=44)
        y = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)), stride=2, padding=1)
        back = conv_transpose2d(y, Tensor(rand(4, 2, 3, 3, seed=45)),
                                Tensor(np.zeros(2)), stride=2, padding=1,
                                output_padding=1)
        assert back.shape == (1, 2, 8, 8)

    def test_output_padding_bounds(self):
        with pytest.raises(ConfigError):
            conv_transpose2d(Tensor(np.zeros((1, 1, 2, 2))),
                             Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)),
                             stride=2, output_padding=2)


class TestBatchNorm:
    def test_normalized_input_passthrough(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((8, 2, 4, 4))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        out = batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           RunningStats(2, np.float64), mode="train", eps=1e-9)
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_constant_channel_collapses_to_beta(self):
        x = np.full((2, 1, 3, 3), 7.0)
        out = batch_norm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.array([5.0])),
                           RunningStats(1, np.float64), mode="train")
        np.testing.assert_allclose(out.data, 5.0)

    def test_matches_definitional_oracle(self):
        x = rand(4, 3, 2, 2, seed=51)
        gamma = rand(3, seed=52) + 0.5
        beta = rand(3, seed=53) - 0.5
        out = batch_norm2d(Tensor(x), Tensor(gamma), Tensor(beta),
                           RunningStats(3, np.float64), mode="train", eps=1e-5)
        expected = batchnorm_train_oracle(x, gamma, beta, eps=1e-5)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_eval_mode_uses_running_stats(self):
        running = RunningStats(1, np.float64)
        running.mean[:] = 2.0
        running.var[:] = 4.0
        x = np.full((1, 1, 2, 2), 4.0)
        out = batch_norm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                           running, mode="eval", eps=0.0 + 1e-12)
        np.testing.assert_allclose(out.data, 1.0, atol=1e-6)

    def test_train_mode_updates_running_stats(self):
        running = RunningStats(1, np.float64)
        x = rand(4, 1, 3, 3, seed=54) + 3.0
        batch_norm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                     running, mode="train", momentum=0.5)
        expected_mean = 0.5 * 0.0 + 0.5 * x.mean()
        np.testing.assert_allclose(running.mean, expected_mean)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            batch_norm2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), RunningStats(2, np.float64))


class TestFullyConnected:
    def test_identity_weight(self):
        x = rand(2, 3, seed=61).reshape(2, 3)
        w = np.eye(3).reshape(1, 1, 3, 3)
        out = fully_connected(Tensor(x.reshape(2, 1, 1, 3)), Tensor(w),
                              Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data.reshape(2, 3), x)

    def test_zero_weight_gives_bias_rows(self):
        b = np.array([1.0, -2.0])
        out = fully_connected(Tensor(rand(3, 1, 1, 4, seed=62)),
                              Tensor(np.zeros((1, 1, 4, 2))), Tensor(b))
        np.testing.assert_allclose(out.data.reshape(3, 2), np.tile(b, (3, 1)))

    def test_matches_matrix_product_oracle(self):
        x = rand(2, 1, 1, 3, seed=63)
        w = rand(1, 1, 3, 2, seed=64) - 0.5
        b = rand(2, seed=65)
        out = fully_connected(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data.reshape(2, 2),
                                   fully_connected_oracle(x, w, b), atol=1e-12)

    def test_flattens_feature_maps(self):
        x = rand(2, 3, 2, 2, seed=66)
        w = rand(1, 1, 12, 5, seed=67)
        out = fully_connected(Tensor(x), Tensor(w), Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.data.reshape(2, 5),
                                   x.reshape(2, 12) @ w.reshape(12, 5),
                                   atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            fully_connected(Tensor(np.zeros((2, 1, 1, 3))),
                            Tensor(np.zeros((1, 1, 4, 2))), Tensor(np.zeros(2)))


class TestTvNorm:
    def test_constant_image_is_zero(self):
        assert tv_norm(Tensor(np.full((1, 1, 4, 4), 0.7))).item() == 0.0

    def test_hand_computed_2x2(self):
        d = Tensor(np.array([[0.0, 1.0], [0.0, 1.0]]))
        assert tv_norm(d).item() == 0.5

    def test_matches_difference_sum_oracle(self):
        d = rand(2, 1, 5, 5, seed=71) - 0.5
        assert abs(tv_norm(Tensor(d)).item() - tv_oracle(d)) < 1e-10

    def test_multi_channel_rejected(self):
        with pytest.raises(ShapeError):
            tv_norm(Tensor(np.zeros((1, 2, 4, 4))))


class TestReshape:
    def test_round_trip(self):
        x = rand(2, 3, 4, 4, seed=81)
        out = reshape(Tensor(x), (2, 48, 1, 1))
        assert out.shape == (2, 48, 1, 1)
        np.testing.assert_array_equal(out.data.reshape(x.shape), x)

    def test_gradient_restores_shape(self):
        x = Tensor(rand(1, 2, 2, 2, seed=82), requires_grad=True)
        backward(mean(square(reshape(x, (1, 8, 1, 1)))))
        assert x.grad.shape == x.shape

    def test_element_count_mismatch(self):
        with pytest.raises(ShapeError):
            reshape(Tensor(np.zeros((1, 1, 2, 2))), (1, 1, 3, 1))
