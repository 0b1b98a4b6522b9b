"""Network core: forward/backward correctness against independent oracles."""

import numpy as np
import pytest

from confed.nn import (
    NetSpec,
    TrainConfig,
    evaluate_accuracy,
    evaluate_mse,
    forward,
    init_params,
    loss_and_grad,
    make_net_spec,
    train,
)


def random_small_spec(rng):
    """A random architecture with at most ~50 parameters."""
    depth = rng.integers(2, 4)
    sizes = [int(rng.integers(1, 5)) for _ in range(depth)]
    head = rng.choice(["softmax", "mse"])
    if head == "mse":
        sizes[-1] = sizes[0]
        final = rng.choice(["identity", "sigmoid"])
    else:
        sizes[-1] = max(2, sizes[-1])
        final = "identity"
    hidden = [str(rng.choice(["relu", "sigmoid", "identity"])) for _ in sizes[1:-1]]
    spec = NetSpec(tuple(sizes), tuple(hidden) + (str(final),), str(head))
    if spec.param_count() > 50:
        return random_small_spec(rng)
    return spec


def finite_difference_grad(spec, params, batch, targets, step=1e-5):
    """Central-difference gradient, the independent oracle for backprop."""
    grad = np.zeros_like(params)
    for i in range(params.size):
        up = params.copy()
        up[i] += step
        down = params.copy()
        down[i] -= step
        loss_up, _ = loss_and_grad(spec, up, batch, targets)
        loss_down, _ = loss_and_grad(spec, down, batch, targets)
        grad[i] = (loss_up - loss_down) / (2 * step)
    return grad


class TestNetSpec:
    def test_param_count_small_net(self):
        # 2*3 + 3 weights+biases, then 3*2 + 2
        spec = make_net_spec([2, 3, 2], "softmax")
        assert spec.param_count() == 17

    def test_requires_two_layers(self):
        with pytest.raises(ValueError):
            NetSpec((4,), (), "softmax")

    def test_softmax_needs_identity_final(self):
        with pytest.raises(ValueError):
            NetSpec((2, 2), ("relu",), "softmax")

    def test_autoencoder_needs_matching_output(self):
        with pytest.raises(ValueError):
            NetSpec((4, 2, 3), ("relu", "identity"), "mse")

    def test_digest_distinguishes_architectures(self):
        a = make_net_spec([2, 3, 2], "softmax")
        b = make_net_spec([2, 4, 2], "softmax")
        assert a.digest() != b.digest()
        assert a.digest() == make_net_spec([2, 3, 2], "softmax").digest()


class TestInitParams:
    def test_deterministic_per_seed(self):
        spec = make_net_spec([3, 5, 2], "softmax")
        a = init_params(spec, 7)
        b = init_params(spec, 7)
        assert a.tobytes() == b.tobytes()

    def test_different_seeds_differ(self):
        spec = make_net_spec([3, 5, 2], "softmax")
        assert not np.array_equal(init_params(spec, 7), init_params(spec, 8))

    def test_length_matches_param_count(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            spec = random_small_spec(rng)
            assert init_params(spec, 1).size == spec.param_count()


class TestForward:
    def test_identity_net_passes_input_through(self):
        spec = NetSpec((2, 2), ("identity",), "mse")
        # W = I, b = 0 laid out row-major
        params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        batch = np.array([[0.3, 0.9], [0.1, 0.4]])
        assert np.allclose(forward(spec, params, batch), batch)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        spec = make_net_spec([4, 6, 3], "softmax")
        params = init_params(spec, 11)
        batch = rng.uniform(0, 1, size=(9, 4))
        sums = forward(spec, params, batch).sum(axis=1)
        assert np.all(np.abs(sums - 1.0) < 1e-9)

    def test_hand_computed_two_by_two(self):
        # manual matrix arithmetic oracle
        spec = NetSpec((2, 2), ("identity",), "softmax")
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([0.5, -0.5])
        params = np.concatenate([w.ravel(), b])
        x = np.array([[1.0, 1.0]])
        logits = x @ w + b
        expected = np.exp(logits) / np.exp(logits).sum()
        assert np.allclose(forward(spec, params, x), expected, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        spec = make_net_spec([3, 2], "softmax")
        params = init_params(spec, 0)
        with pytest.raises(ValueError):
            forward(spec, params, np.zeros((2, 4)))
        with pytest.raises(ValueError):
            forward(spec, params[:-1], np.zeros((2, 3)))


class TestLossAndGrad:
    def test_perfect_reconstruction_zero_loss_zero_grad(self):
        spec = NetSpec((2, 2), ("identity",), "mse")
        params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        batch = np.array([[0.2, 0.7]])
        loss, grad = loss_and_grad(spec, params, batch, batch)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros_like(params))

    def test_scalar_mse_by_hand(self):
        # output 0.5 against target 1.0 must cost (1 - 0.5)^2 = 0.25
        spec = NetSpec((1, 1), ("identity",), "mse")
        params = np.array([0.5, 0.0])
        loss, _ = loss_and_grad(spec, params, np.array([[1.0]]), np.array([[1.0]]))
        assert loss == pytest.approx(0.25)

    def test_losses_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            spec = random_small_spec(rng)
            params = init_params(spec, int(rng.integers(0, 100)))
            batch = rng.uniform(0, 1, size=(4, spec.input_size))
            if spec.head == "softmax":
                targets = rng.integers(0, spec.output_size, size=4)
            else:
                targets = batch
            loss, _ = loss_and_grad(spec, params, batch, targets)
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1234)
        worst = 0.0
        for _ in range(20):
            spec = random_small_spec(rng)
            params = init_params(spec, int(rng.integers(0, 1000)))
            # keep pre-activations away from relu kinks for a clean check
            batch = rng.uniform(0.1, 1.0, size=(3, spec.input_size))
            if spec.head == "softmax":
                targets = rng.integers(0, spec.output_size, size=3)
            else:
                targets = rng.uniform(0, 1, size=(3, spec.output_size))
            _, analytic = loss_and_grad(spec, params, batch, targets)
            numeric = finite_difference_grad(spec, params, batch, targets)
            denom = np.maximum(1e-8, np.abs(numeric) + np.abs(analytic))
            worst = max(worst, float(np.max(np.abs(numeric - analytic) / denom)))
        assert worst < 1e-4

    def test_overflow_raises_instead_of_nan(self):
        spec = NetSpec((1, 1), ("identity",), "mse")
        params = np.array([1e200, 0.0])
        with pytest.raises(ValueError):
            loss_and_grad(spec, params, np.array([[1.0]]), np.array([[0.0]]))

    def test_label_shape_checked(self):
        spec = make_net_spec([2, 2], "softmax")
        params = init_params(spec, 0)
        with pytest.raises(ValueError):
            loss_and_grad(spec, params, np.zeros((3, 2)), np.array([0, 1]))


class TestTrain:
    @staticmethod
    def _blobs(rng, n_per_class=30):
        centers = np.array([[0.2, 0.2, 0.8], [0.8, 0.8, 0.2]])
        feats = np.vstack([
            centers[0] + rng.normal(0, 0.05, size=(n_per_class, 3)),
            centers[1] + rng.normal(0, 0.05, size=(n_per_class, 3)),
        ])
        labels = np.repeat([0, 1], n_per_class)
        return np.clip(feats, 0, 1), labels

    def test_zero_learning_rate_is_identity(self):
        spec = make_net_spec([3, 4, 2], "softmax")
        params = init_params(spec, 2)
        feats, labels = self._blobs(np.random.default_rng(0))
        config = TrainConfig(epochs=2, learning_rate=0.0, batch_size=8, rng_seed=1)
        out = train(spec, params, feats, labels, config)
        assert out.tobytes() == params.tobytes()

    def test_same_seed_byte_identical(self):
        spec = make_net_spec([3, 4, 2], "softmax")
        params = init_params(spec, 2)
        feats, labels = self._blobs(np.random.default_rng(0))
        config = TrainConfig(epochs=3, learning_rate=0.2, batch_size=8, rng_seed=99)
        a = train(spec, params, feats, labels, config)
        b = train(spec, params, feats, labels, config)
        assert a.tobytes() == b.tobytes()

    def test_loss_decreases_on_separable_blobs(self):
        spec = make_net_spec([3, 8, 2], "softmax")
        params = init_params(spec, 2)
        feats, labels = self._blobs(np.random.default_rng(0))
        before, _ = loss_and_grad(spec, params, feats, labels)
        config = TrainConfig(epochs=5, learning_rate=0.5, batch_size=8, rng_seed=1)
        after_params = train(spec, params, feats, labels, config)
        after, _ = loss_and_grad(spec, after_params, feats, labels)
        assert after <= before

    def test_empty_dataset_rejected(self):
        spec = make_net_spec([3, 2], "softmax")
        params = init_params(spec, 2)
        config = TrainConfig(epochs=1, learning_rate=0.1, batch_size=4, rng_seed=0)
        with pytest.raises(ValueError):
            train(spec, params, np.zeros((0, 3)), np.zeros(0, dtype=int), config)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0, learning_rate=0.1, batch_size=4, rng_seed=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, learning_rate=0.1, batch_size=0, rng_seed=0)


class TestEvaluate:
    @staticmethod
    def _argmax_net():
        # identity logits: the prediction is just the largest feature
        spec = NetSpec((3, 3), ("identity",), "softmax")
        params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
        return spec, params

    def test_all_correct_is_one(self):
        spec, params = self._argmax_net()
        feats = np.eye(3)
        assert evaluate_accuracy(spec, params, feats, np.array([0, 1, 2])) == 1.0

    def test_none_correct_is_zero(self):
        spec, params = self._argmax_net()
        feats = np.eye(3)
        assert evaluate_accuracy(spec, params, feats, np.array([1, 2, 0])) == 0.0

    def test_three_of_four_counting(self):
        spec, params = self._argmax_net()
        feats = np.array([
            [0.9, 0.0, 0.1],
            [0.1, 0.8, 0.0],
            [0.0, 0.1, 0.9],
            [0.7, 0.2, 0.1],
        ])
        labels = np.array([0, 1, 2, 1])  # last one is wrong on purpose
        assert evaluate_accuracy(spec, params, feats, labels) == pytest.approx(0.75)

    def test_accuracy_requires_classifier_head(self):
        spec = NetSpec((2, 2), ("identity",), "mse")
        params = np.zeros(6)
        with pytest.raises(ValueError):
            evaluate_accuracy(spec, params, np.zeros((1, 2)), np.array([0]))

    def test_mse_zero_for_identity(self):
        spec = NetSpec((2, 2), ("identity",), "mse")
        params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        feats = np.array([[0.4, 0.6]])
        assert evaluate_mse(spec, params, feats) == 0.0

    def test_mse_hand_case(self):
        # zero net reconstructs [1, 1] as [0, 0]: mean((1,1)) = 1.0
        spec = NetSpec((2, 2), ("identity",), "mse")
        params = np.zeros(6)
        assert evaluate_mse(spec, params, np.array([[1.0, 1.0]])) == pytest.approx(1.0)

    def test_mse_requires_autoencoder_head(self):
        spec = make_net_spec([2, 2], "softmax")
        with pytest.raises(ValueError):
            evaluate_mse(spec, init_params(spec, 0), np.zeros((1, 2)))

    def test_evaluation_is_deterministic(self):
        rng = np.random.default_rng(8)
        spec = make_net_spec([4, 4], "mse")
        params = init_params(spec, 3)
        feats = rng.uniform(0, 1, size=(10, 4))
        assert evaluate_mse(spec, params, feats) == evaluate_mse(spec, params, feats)
