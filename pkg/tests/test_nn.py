import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, conv1d_naive, focal_reference, maxpool1d_naive
from preictal.dataset import Sensor
from preictal.errors import ShapeError
from preictal.nn import (
    AdamState,
    FocalLossConfig,
    SensorModel,
    TrainConfig,
    adam_step,
    build_model,
    focal_loss,
    focal_loss_batch,
    inverse_frequency_alpha,
    load_model,
    mean_focal_loss,
    model_forward,
    save_model,
    train,
)
from preictal.nn.losses import focal_grad_wrt_logits
from preictal.nn.model import backward_batch, parameters, set_parameters
from preictal.nn.ops import (
    BatchNormParams,
    ConvBlockParams,
    DenseParams,
    batchnorm_forward,
    batchnorm_forward_with_cache,
    conv1d_forward,
    dense_forward,
    maxpool1d,
    maxpool1d_backward,
    maxpool1d_with_argmax,
    relu,
    softmax,
)
from preictal.nn.train import TrainReport, evaluate, write_train_report


# ---------------------------------------------------------------------------
# Convolution


class TestConv1d:
    def test_hand_example(self):
        # x = [1 2 3 4], kernel [1 0 -1], bias 0.5, same padding:
        # padded [0 1 2 3 4 0] -> correlations [-2 -2 -2 3] + 0.5.
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        params = ConvBlockParams(kernels=np.array([[[1.0, 0.0, -1.0]]]),
                                 bias=np.array([0.5]), pool_size=2)
        out = conv1d_forward(x, params)
        np.testing.assert_array_equal(out, [[-1.5, -1.5, -1.5, 3.5]])

    def test_matches_naive_oracle_exactly(self):
        # Integer-valued inputs keep every partial product exactly
        # representable, so the vectorized path must agree bit for bit.
        rng = np.random.default_rng(0)
        for _ in range(25):
            b, c = rng.integers(1, 4), rng.integers(1, 5)
            k = int(rng.choice([1, 3, 5, 7]))
            t = int(rng.integers(k, k + 20))
            x = rng.integers(-8, 9, size=(b, c, t)).astype(float)
            kernels = rng.integers(-4, 5, size=(c, c, k)).astype(float)
            bias = rng.integers(-4, 5, size=c).astype(float)
            params = ConvBlockParams(kernels=kernels, bias=bias, pool_size=2)
            np.testing.assert_array_equal(conv1d_forward(x, params),
                                          conv1d_naive(x, kernels, bias))

    def test_single_window_and_batch_agree(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 2, 20))
        params = ConvBlockParams(kernels=rng.standard_normal((2, 2, 5)),
                                 bias=rng.standard_normal(2), pool_size=2)
        batched = conv1d_forward(x, params)
        for i in range(3):
            np.testing.assert_array_equal(conv1d_forward(x[i], params), batched[i])

    def test_channel_mismatch_rejected(self):
        params = ConvBlockParams(kernels=np.zeros((2, 2, 3)),
                                 bias=np.zeros(2), pool_size=2)
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((3, 10)), params)

    def test_input_shorter_than_kernel_still_works(self):
        # Deep pooling stacks shrink the signal below the kernel length; with
        # zero same-padding the convolution stays well-defined there.
        rng = np.random.default_rng(13)
        x = rng.integers(-5, 6, size=(2, 1, 2)).astype(float)
        kernels = rng.integers(-3, 4, size=(1, 1, 5)).astype(float)
        params = ConvBlockParams(kernels=kernels, bias=np.zeros(1), pool_size=2)
        out = conv1d_forward(x, params)
        assert out.shape == (2, 1, 2)
        np.testing.assert_array_equal(out, conv1d_naive(x, kernels, np.zeros(1)))

    def test_block_params_validation(self):
        with pytest.raises(ValueError):
            ConvBlockParams(kernels=np.zeros((2, 3, 5)), bias=np.zeros(2),
                            pool_size=2)  # out != in
        with pytest.raises(ShapeError):
            ConvBlockParams(kernels=np.zeros((2, 2, 5)), bias=np.zeros(3),
                            pool_size=2)
        with pytest.raises(ValueError):
            ConvBlockParams(kernels=np.zeros((2, 2, 5)), bias=np.zeros(2),
                            pool_size=0)


# ---------------------------------------------------------------------------
# Max pooling


class TestMaxPool:
    def test_hand_example_with_partial_tail(self):
        x = np.array([[5.0, 1.0, 4.0, 4.0, 2.0]])
        np.testing.assert_array_equal(maxpool1d(x, 2), [[5.0, 4.0, 2.0]])

    def test_matches_naive_oracle_exactly(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            b, c, t = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 30)
            pool = int(rng.integers(1, 6))
            x = rng.standard_normal((b, c, t))
            np.testing.assert_array_equal(maxpool1d(x, pool),
                                          maxpool1d_naive(x, pool))

    def test_ties_route_gradient_to_first_maximum(self):
        x = np.array([[[3.0, 3.0, 1.0, 2.0]]])
        out, arg = maxpool1d_with_argmax(x, 2)
        np.testing.assert_array_equal(out, [[[3.0, 2.0]]])
        grad = maxpool1d_backward(np.array([[[1.0, 1.0]]]), arg, 2, 4)
        np.testing.assert_array_equal(grad, [[[1.0, 0.0, 0.0, 1.0]]])

    def test_backward_ignores_padding_region(self):
        x = np.array([[[1.0, 2.0, 5.0]]])
        out, arg = maxpool1d_with_argmax(x, 2)
        np.testing.assert_array_equal(out, [[[2.0, 5.0]]])
        grad = maxpool1d_backward(np.array([[[1.0, 1.0]]]), arg, 2, 3)
        assert grad.shape == (1, 1, 3)
        np.testing.assert_array_equal(grad, [[[0.0, 1.0, 1.0]]])

    def test_invalid_pool_size(self):
        with pytest.raises(ValueError):
            maxpool1d(np.zeros((1, 1, 4)), 0)


# ---------------------------------------------------------------------------
# Batch normalization


class TestBatchNorm:
    def test_train_mode_normalizes_batch(self):
        params = BatchNormParams(gamma=np.ones(1), beta=np.zeros(1),
                                 running_mean=np.zeros(1), running_var=np.ones(1),
                                 epsilon=1e-12)
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        out = batchnorm_forward(x, params, "train", update_running=False)
        expected = (x - 2.5) / np.sqrt(1.25 + 1e-12)
        np.testing.assert_allclose(out, expected, atol=1e-9)
        assert abs(out.mean()) < 1e-9
        np.testing.assert_allclose(out.std(), 1.0, atol=1e-6)

    def test_running_statistics_update(self):
        params = BatchNormParams(gamma=np.ones(1), beta=np.zeros(1),
                                 running_mean=np.zeros(1), running_var=np.ones(1),
                                 momentum=0.1)
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        batchnorm_forward(x, params, "train")
        np.testing.assert_allclose(params.running_mean, [0.9 * 0.0 + 0.1 * 2.5])
        np.testing.assert_allclose(params.running_var, [0.9 * 1.0 + 0.1 * 1.25])

    def test_inference_mode_is_pure_and_uses_running_stats(self):
        params = BatchNormParams(gamma=np.array([2.0]), beta=np.array([1.0]),
                                 running_mean=np.array([3.0]),
                                 running_var=np.array([4.0]), epsilon=1e-12)
        x = np.array([[[3.0, 5.0]]])
        out = batchnorm_forward(x, params, "inference")
        np.testing.assert_allclose(out, [[[1.0, 3.0]]], atol=1e-9)
        np.testing.assert_array_equal(params.running_mean, [3.0])
        np.testing.assert_array_equal(params.running_var, [4.0])

    def test_gamma_beta_applied(self):
        params = BatchNormParams(gamma=np.array([3.0]), beta=np.array([-1.0]),
                                 running_mean=np.zeros(1), running_var=np.ones(1),
                                 epsilon=1e-12)
        x = np.array([[[1.0, -1.0]]])
        out, xhat = batchnorm_forward_with_cache(x, params, "train",
                                                 update_running=False)
        np.testing.assert_allclose(out, 3.0 * xhat - 1.0)

    def test_mode_and_shape_validation(self):
        params = BatchNormParams(gamma=np.ones(2), beta=np.zeros(2),
                                 running_mean=np.zeros(2), running_var=np.ones(2))
        with pytest.raises(ValueError):
            batchnorm_forward(np.zeros((2, 4)), params, "eval")
        with pytest.raises(ShapeError):
            batchnorm_forward(np.zeros((3, 4)), params, "train")
        with pytest.raises(ValueError):
            BatchNormParams(gamma=np.ones(1), beta=np.zeros(1),
                            running_mean=np.zeros(1), running_var=np.ones(1),
                            momentum=1.5)


# ---------------------------------------------------------------------------
# Dense, ReLU, softmax


class TestDenseAndSoftmax:
    def test_dense_example(self):
        params = DenseParams(weights=np.array([[1.0, 2.0], [0.0, -1.0]]),
                             bias=np.array([0.5, 0.0]))
        np.testing.assert_array_equal(dense_forward(np.array([3.0, 4.0]), params),
                                      [11.5, -4.0])

    def test_dense_width_mismatch(self):
        params = DenseParams(weights=np.zeros((2, 3)), bias=np.zeros(2))
        with pytest.raises(ShapeError):
            dense_forward(np.zeros(4), params)

    def test_relu(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])),
                                      [0.0, 0.0, 2.0])

    def test_softmax_one_hot_logit(self):
        # logits [1 0 0 0 0] put e / (e + 4) on the first class.
        probs = softmax(np.array([1.0, 0.0, 0.0, 0.0, 0.0]))
        e = np.e
        np.testing.assert_allclose(probs[0], e / (e + 4.0), atol=1e-12)
        np.testing.assert_allclose(probs[1:], np.full(4, 1.0 / (e + 4.0)),
                                   atol=1e-12)

    def test_softmax_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((8, 5)) * 30
        probs = softmax(logits)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(8), atol=1e-12)
        np.testing.assert_allclose(softmax(logits + 1000.0), probs, atol=1e-12)
        assert np.all(probs > 0)

    def test_softmax_extreme_logits_stay_finite(self):
        probs = softmax(np.array([1e4, 0.0, -1e4, 0.0, 0.0]))
        assert np.all(np.isfinite(probs))
        np.testing.assert_allclose(probs.sum(), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Focal loss


class TestFocalLoss:
    def test_textbook_example(self):
        # alpha 0.25, gamma 2, p_t 0.9: 0.25 * 0.01 * -ln(0.9) ~= 2.634e-4.
        probs = np.array([0.9, 0.025, 0.025, 0.025, 0.025])
        cfg = FocalLossConfig(gamma=2.0, alpha=np.array([0.25, 1, 1, 1, 1]))
        loss = focal_loss(probs, 0, cfg)
        np.testing.assert_allclose(loss, 0.25 * 0.01 * -np.log(0.9), atol=1e-15)
        np.testing.assert_allclose(loss, 2.634013e-4, rtol=1e-6)

    def test_gamma_zero_alpha_one_is_cross_entropy(self):
        rng = np.random.default_rng(4)
        cfg = FocalLossConfig(gamma=0.0)
        for _ in range(200):
            logits = rng.standard_normal(5) * 4
            probs = softmax(logits)
            target = int(rng.integers(5))
            assert abs(focal_loss(probs, target, cfg)
                       - (-np.log(probs[target]))) <= 1e-12

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            probs = softmax(rng.standard_normal(5) * 3)
            gamma = float(rng.uniform(0, 4))
            alpha = rng.uniform(0.1, 1.0, size=5)
            target = int(rng.integers(5))
            cfg = FocalLossConfig(gamma=gamma, alpha=alpha)
            np.testing.assert_allclose(
                focal_loss(probs, target, cfg),
                focal_reference(probs, target, gamma, alpha), rtol=1e-12)

    def test_confidently_wrong_is_clamped_finite(self):
        probs = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        loss = focal_loss(probs, 1, FocalLossConfig(gamma=2.0))
        assert np.isfinite(loss)
        np.testing.assert_allclose(loss, -(1.0 - 1e-12) ** 2 * np.log(1e-12),
                                   rtol=1e-12)

    def test_perfect_prediction_costs_nothing(self):
        probs = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        assert focal_loss(probs, 2, FocalLossConfig(gamma=2.0)) == 0.0

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(6)
        probs = softmax(rng.standard_normal((7, 5)))
        targets = rng.integers(0, 5, size=7)
        cfg = FocalLossConfig(gamma=1.5, alpha=rng.uniform(0.2, 1.0, 5))
        batch = focal_loss_batch(probs, targets, cfg)
        for i in range(7):
            np.testing.assert_allclose(batch[i], focal_loss(probs[i], targets[i], cfg))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FocalLossConfig(gamma=-0.5)
        with pytest.raises(ValueError):
            FocalLossConfig(alpha=np.ones(4))
        with pytest.raises(ValueError):
            FocalLossConfig(alpha=np.array([0.0, 1, 1, 1, 1]))
        with pytest.raises(ValueError):
            FocalLossConfig(alpha=np.array([1.5, 1, 1, 1, 1]))

    def test_inverse_frequency_alpha(self):
        alpha = inverse_frequency_alpha(np.array([0, 0, 0, 0, 1]))
        np.testing.assert_allclose(alpha, [0.25, 1.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(inverse_frequency_alpha(np.array([2, 2])),
                                   [1, 1, 1, 1, 1])

    def test_logit_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((4, 5))
        targets = rng.integers(0, 5, size=4)
        cfg = FocalLossConfig(gamma=2.0, alpha=rng.uniform(0.3, 1.0, 5))

        def loss():
            return float(focal_loss_batch(softmax(logits), targets, cfg).mean())

        (fd,) = central_difference(loss, [logits], step=1e-6)
        analytic = focal_grad_wrt_logits(softmax(logits), targets, cfg)
        np.testing.assert_allclose(analytic, fd, atol=1e-8)


# ---------------------------------------------------------------------------
# Model construction, forward, gradients


def _tiny_model(seed=0, sensor=Sensor.EEG, channels=2):
    return build_model(sensor, channels, window_samples=16, kernel_len=3,
                       pool_size=2, hidden=(4, 3), seed=seed)


class TestModel:
    def test_conv_stack_output_widths(self):
        # pool 4 halves 320 -> 80 -> 20 -> 5 -> 2 by ceiling division.
        eeg = build_model(Sensor.EEG, 4, 320, pool_size=4)
        assert eeg.dense[0].weights.shape == (64, 4 * 2)
        ecg = build_model(Sensor.ECG, 1, 320, pool_size=2)
        assert ecg.dense[0].weights.shape == (64, 1 * 20)
        assert eeg.dense[-1].weights.shape[0] == 5

    def test_forward_shapes_and_normalization(self):
        model = _tiny_model()
        rng = np.random.default_rng(8)
        one = model_forward(model, rng.standard_normal((2, 16)))
        assert one.shape == (5,)
        np.testing.assert_allclose(one.sum(), 1.0, atol=1e-12)
        batch = model_forward(model, rng.standard_normal((3, 2, 16)))
        assert batch.shape == (3, 5)
        np.testing.assert_allclose(batch.sum(axis=1), np.ones(3), atol=1e-12)

    def test_build_is_deterministic_in_seed(self):
        a, b = _tiny_model(seed=3), _tiny_model(seed=3)
        for (_, pa), (_, pb) in zip(parameters(a), parameters(b)):
            np.testing.assert_array_equal(pa, pb)
        c = _tiny_model(seed=4)
        assert any(not np.array_equal(pa, pc)
                   for (_, pa), (_, pc) in zip(parameters(a), parameters(c)))

    def test_initial_blocks_are_near_identity(self):
        model = _tiny_model()
        for blk in model.blocks:
            center = (blk.kernels.shape[2] - 1) // 2
            diag = blk.kernels[:, :, center]
            assert np.all(np.abs(np.diag(diag) - 1.0) < 1.0)

    def test_wrong_window_shape_rejected(self):
        model = _tiny_model()
        with pytest.raises(ShapeError):
            model_forward(model, np.zeros((2, 15)))
        with pytest.raises(ShapeError):
            model_forward(model, np.zeros((3, 16)))

    def test_backward_requires_train_mode(self):
        model = _tiny_model()
        xb = np.zeros((1, 2, 16))
        with pytest.raises(ValueError):
            backward_batch(model, xb, np.array([0]), FocalLossConfig())

    def test_gradients_match_finite_differences(self):
        model = _tiny_model(seed=1)
        model.mode = "train"
        rng = np.random.default_rng(9)
        xb = rng.standard_normal((3, 2, 16))
        yb = np.array([0, 2, 4])
        cfg = FocalLossConfig(gamma=2.0,
                              alpha=np.array([0.5, 0.7, 0.9, 1.0, 0.6]))
        _, grads = backward_batch(model, xb, yb, cfg)

        names = [n for n, _ in parameters(model)]
        arrays = [a for _, a in parameters(model)]

        def loss():
            return mean_focal_loss(model, xb, yb, cfg)

        fd = central_difference(loss, arrays, step=1e-5)
        for name, g_fd in zip(names, fd):
            g = grads[name]
            denom = np.maximum(np.abs(g), np.abs(g_fd))
            rel = np.abs(g - g_fd) / np.where(denom > 1e-8, denom, 1.0)
            assert rel.max() < 1e-5, f"{name}: max rel err {rel.max():.3e}"

    def test_set_parameters_roundtrip(self):
        model = _tiny_model(seed=2)
        values = {n: a.copy() + 1.0 for n, a in parameters(model)}
        set_parameters(model, values)
        for n, a in parameters(model):
            np.testing.assert_array_equal(a, values[n])

    def test_structure_validation(self):
        model = _tiny_model()
        with pytest.raises(ValueError):
            SensorModel(Sensor.EEG, model.batchnorm, model.blocks[:3],
                        model.dense, 16)
        with pytest.raises(ShapeError):
            bad_dense = [model.dense[0], model.dense[1],
                         DenseParams(np.zeros((4, 3)), np.zeros(4))]
            SensorModel(Sensor.EEG, model.batchnorm, model.blocks, bad_dense, 16)


# ---------------------------------------------------------------------------
# Weight files


class TestModelFiles:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = _tiny_model(seed=5)
        model.batchnorm.running_mean += 0.25  # non-default state must survive
        path = tmp_path / "m.bin"
        save_model(model, path)
        back = load_model(path)
        assert back.sensor is model.sensor
        assert back.window_samples == model.window_samples
        for (na, a), (nb, b) in zip(parameters(model), parameters(back)):
            assert na == nb
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.batchnorm.running_mean,
                                      model.batchnorm.running_mean)
        np.testing.assert_array_equal(back.batchnorm.running_var,
                                      model.batchnorm.running_var)

    def test_loaded_model_predicts_identically(self, tmp_path):
        model = _tiny_model(seed=6)
        path = tmp_path / "m.bin"
        save_model(model, path)
        back = load_model(path)
        x = np.random.default_rng(10).standard_normal((4, 2, 16))
        np.testing.assert_array_equal(model_forward(model, x),
                                      model_forward(back, x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_model(path)

    def test_truncated_blob_rejected(self, tmp_path):
        model = _tiny_model()
        path = tmp_path / "m.bin"
        save_model(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ValueError):
            load_model(path)

    def test_trailing_data_rejected(self, tmp_path):
        model = _tiny_model()
        path = tmp_path / "m.bin"
        save_model(model, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(ValueError):
            load_model(path)


# ---------------------------------------------------------------------------
# Adam


class TestAdam:
    def test_first_step_formula(self):
        p = [np.array([1.0])]
        g = [np.array([0.5])]
        cfg = TrainConfig(learning_rate=1e-3)
        state = AdamState.for_params(p)
        adam_step(p, g, state, cfg)
        # After bias correction the first step is lr * g / (|g| + eps).
        expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)
        np.testing.assert_allclose(p[0], [expected], atol=1e-15)
        assert state.t == 1

    def test_matches_reference_over_many_steps(self):
        rng = np.random.default_rng(11)
        cfg = TrainConfig(learning_rate=0.01)
        p = [rng.standard_normal(4), rng.standard_normal((2, 3))]
        ref_p = [a.copy() for a in p]
        m = [np.zeros_like(a) for a in ref_p]
        v = [np.zeros_like(a) for a in ref_p]
        state = AdamState.for_params(p)
        for t in range(1, 21):
            grads = [rng.standard_normal(a.shape) for a in p]
            adam_step(p, grads, state, cfg)
            for a, g, mi, vi in zip(ref_p, grads, m, v):
                mi[...] = cfg.beta1 * mi + (1 - cfg.beta1) * g
                vi[...] = cfg.beta2 * vi + (1 - cfg.beta2) * g * g
                mhat = mi / (1 - cfg.beta1 ** t)
                vhat = vi / (1 - cfg.beta2 ** t)
                a -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_epsilon)
        for got, want in zip(p, ref_p):
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        p = [np.zeros(3)]
        state = AdamState.for_params(p)
        with pytest.raises(ShapeError):
            adam_step(p, [np.zeros(4)], state, TrainConfig())
        with pytest.raises(ShapeError):
            adam_step(p, [np.zeros(3), np.zeros(1)], state, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


# ---------------------------------------------------------------------------
# Training loop


def _toy_windows(n_per_class, seed, channels=2, samples=64):
    """Windows whose dominant frequency encodes the class; separable by a CNN."""
    from preictal.dataset import LabelClass, LabeledWindow

    rng = np.random.default_rng(seed)
    t = np.arange(samples)
    windows = []
    idx = 0
    for code in range(5):
        for _ in range(n_per_class):
            phase = 0.3 * rng.standard_normal((channels, 1))
            data = np.sin(2 * np.pi * (code + 1) * t / samples + phase)
            data += 0.05 * rng.standard_normal((channels, samples))
            windows.append(LabeledWindow(idx, float(idx), data, LabelClass(code)))
            idx += 1
    return windows


def _toy_model(seed=0):
    return build_model(Sensor.EEG, 2, window_samples=64, kernel_len=3,
                       pool_size=2, hidden=(8, 6), seed=seed)


class TestTrain:
    def test_learns_separable_toy_problem(self):
        model = _toy_model(seed=0)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=40,
                          patience=10, seed=0)
        model, report = train(model, _toy_windows(12, seed=1),
                              _toy_windows(4, seed=2), train_cfg=cfg)
        assert max(report.val_accuracy) >= 0.95
        assert model.mode == "inference"

    def test_deterministic(self):
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=3,
                          patience=2, seed=7)
        runs = []
        for _ in range(2):
            model = _toy_model(seed=3)
            model, report = train(model, _toy_windows(6, seed=4),
                                  _toy_windows(2, seed=5), train_cfg=cfg)
            runs.append(([a.copy() for _, a in parameters(model)],
                         report.train_loss, report.val_loss))
        for a, b in zip(runs[0][0], runs[1][0]):
            np.testing.assert_array_equal(a, b)
        assert runs[0][1] == runs[1][1]
        assert runs[0][2] == runs[1][2]

    def test_report_is_consistent(self):
        model = _toy_model(seed=1)
        cfg = TrainConfig(max_epochs=4, patience=2, batch_size=8, seed=0)
        _, report = train(model, _toy_windows(6, seed=6),
                          _toy_windows(2, seed=7), train_cfg=cfg)
        n = len(report.epochs)
        assert 1 <= n <= 4
        assert report.epochs == list(range(1, n + 1))
        assert len(report.train_loss) == len(report.val_loss) == n
        assert len(report.val_accuracy) == n
        assert 1 <= report.best_epoch <= n
        best = report.best_epoch - 1
        assert report.val_loss[best] == min(report.val_loss)

    def test_restores_best_snapshot(self):
        model = _toy_model(seed=2)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=10,
                          patience=9, seed=0)
        train_w, val_w = _toy_windows(6, seed=8), _toy_windows(2, seed=9)
        model, report = train(model, train_w, val_w, train_cfg=cfg)
        from preictal.nn.train import stack_windows
        xv, yv = stack_windows(val_w)
        loss, _ = evaluate(model, xv, yv,
                           FocalLossConfig(alpha=inverse_frequency_alpha(
                               stack_windows(train_w)[1])))
        np.testing.assert_allclose(loss, min(report.val_loss), rtol=1e-9)

    def test_rejects_empty_sets(self):
        model = _toy_model()
        with pytest.raises(ValueError):
            train(model, [], _toy_windows(2, seed=0))
        with pytest.raises(ValueError):
            train(model, _toy_windows(2, seed=0), [])

    def test_rejects_mismatched_window_shape(self):
        model = _toy_model()  # expects 2 x 64
        wrong = _toy_windows(2, seed=0, channels=1)
        with pytest.raises(ValueError, match="does not match"):
            train(model, wrong, wrong)

    def test_write_train_report(self, tmp_path):
        report = TrainReport(epochs=[1, 2], train_loss=[0.5, 0.25],
                             val_loss=[0.6, 0.3], val_accuracy=[0.5, 0.9],
                             best_epoch=2)
        path = tmp_path / "r.csv"
        write_train_report(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_accuracy"
        assert lines[1] == "1,0.5,0.6,0.5"
        assert len(lines) == 3
