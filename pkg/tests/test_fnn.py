import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from hybridlab.exceptions import TrainingError
from hybridlab.fnn import (FNNRegressor, FnnModel, TrainConfig, backward, compute_stats, forward,
                           init_model, mse_loss, normalize, train)
from oracles import (finite_difference_gradient, kink_free_batch, max_relative_error,
                     min_abs_preactivation, random_network)


def identity_stats(n):
    return np.zeros(n), np.ones(n)


class TestNormalize:
    def test_examples(self):
        mean, std = np.array([1.0, -2.0]), np.array([2.0, 0.5])
        np.testing.assert_array_equal(normalize((mean, std), mean), [0.0, 0.0])
        np.testing.assert_array_equal(normalize((mean, std), mean + std), [1.0, 1.0])
        x = np.array([3.0, 4.0])
        np.testing.assert_array_equal(normalize(identity_stats(2), x), x)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            normalize(identity_stats(2), np.ones(3))

    def test_constant_column_gets_unit_std(self):
        mean, std = compute_stats(np.array([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_array_equal(mean, [2.0, 5.0])
        np.testing.assert_array_equal(std, [1.0, 1.0])


class TestForward:
    def test_zero_network(self):
        m = FnnModel.zeros([3, 4, 2])
        np.testing.assert_array_equal(forward(m, np.array([1.0, -2.0, 7.0])), [0.0, 0.0])

    def test_hand_relu(self):
        m = FnnModel([1, 1, 1], [[[1.0]], [[1.0]]], [[0.0], [0.0]], [0.0], [1.0])
        assert forward(m, np.array([-3.0]))[0] == 0.0
        assert forward(m, np.array([2.0]))[0] == 2.0

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            forward(FnnModel.zeros([2, 1]), np.array([1.0, np.nan]))

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            forward(FnnModel.zeros([2, 1]), np.ones(3))

    def test_nonnegative_propagation(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            m = random_network(rng)
            for W, b in zip(m.weights, m.biases):
                W[:] = np.abs(W)
                b[:] = 0.0
            m.target_mean[:] = 0.0
            m.norm_mean[:] = 0.0
            X = np.abs(rng.normal(size=(10, m.n_inputs)))
            assert np.all(forward(m, X) >= 0.0)

    def test_batch_equals_rows(self):
        rng = np.random.default_rng(2)
        m = random_network(rng)
        X = rng.normal(size=(5, m.n_inputs))
        np.testing.assert_allclose(forward(m, X), np.vstack([forward(m, x) for x in X]), rtol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_piecewise_linear_along_lines(self, seed):
        rng = np.random.default_rng(seed)
        m = random_network(rng)
        x, d = rng.normal(size=m.n_inputs), rng.normal(size=m.n_inputs)
        alphas = np.array([0.0, 1e-3, 2e-3])
        pts = x + alphas[:, None] * d
        if min_abs_preactivation(m, pts) < 1e-2:
            return  # segment may contain a kink
        y = forward(m, pts)
        np.testing.assert_allclose(y[1] - y[0], y[2] - y[1], rtol=1e-6, atol=1e-12)


class TestLoss:
    def test_perfect_model(self):
        m = FnnModel.zeros([2, 3, 1])
        assert mse_loss(m, np.ones((4, 2)), np.zeros((4, 1))) == 0.0

    def test_constant_residual(self):
        assert mse_loss(FnnModel.zeros([2, 1]), np.ones((4, 2)), np.ones(4)) == 1.0

    def test_two_sample_hand_case(self):
        m = FnnModel([1, 1], [[[2.0]]], [[0.5]], [0.0], [1.0])
        X = np.array([[1.0], [-1.0]])
        Y = np.array([3.0, 0.0])
        # predictions 2.5 and -1.5 -> residuals 0.5 and 1.5
        assert mse_loss(m, X, Y) == pytest.approx((0.25 + 2.25) / 2)

    def test_multi_output_sums_components(self):
        m = FnnModel.zeros([1, 2])
        assert mse_loss(m, np.zeros((2, 1)), np.array([[1.0, 2.0], [0.0, 1.0]])) == pytest.approx(3.0)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            mse_loss(FnnModel.zeros([2, 1]), np.empty((0, 2)), np.empty(0))


class TestBackward:
    def test_zero_residual_gives_zero_gradient(self):
        rng = np.random.default_rng(0)
        m = random_network(rng)
        X = rng.normal(size=(6, m.n_inputs))
        dW, db = backward(m, X, forward(m, X))
        assert all(np.all(g == 0) for g in dW + db)

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = random_network(rng)
        X = kink_free_batch(m, rng, 7)
        Y = rng.normal(size=(7, m.n_outputs))
        dW, db = backward(m, X, Y)
        fdW, fdb = finite_difference_gradient(m, X, Y)
        assert max_relative_error(dW + db, fdW + fdb) <= 1e-4

    def test_linear_network_closed_form(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 3))
        Y = rng.normal(size=(20, 1))
        W, b = rng.normal(size=(1, 3)), np.array([0.2])
        m = FnnModel([3, 1], [W], [b], *identity_stats(3))
        r = X @ W.T + b - Y
        dW, db = backward(m, X, Y)
        np.testing.assert_allclose(dW[0], 2.0 / 20 * r.T @ X, rtol=1e-12)
        np.testing.assert_allclose(db[0], 2.0 / 20 * r.sum(axis=0), rtol=1e-12)

    def test_relu_subgradient_at_zero(self):
        # hidden pre-activation exactly 0 -> no gradient flows to the first layer
        m = FnnModel([1, 1, 1], [[[1.0]], [[1.0]]], [[0.0], [0.0]], [0.0], [1.0])
        dW, db = backward(m, np.array([[0.0]]), np.array([1.0]))
        assert dW[0][0, 0] == 0.0 and db[0][0] == 0.0
        assert db[1][0] == -2.0


class TestTrain:
    def test_learns_linear_function(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (1000, 1))
        m = init_model([1, 32, 32, 1], seed=0, norm_stats=compute_stats(x))
        best, hist = train(m, x, 2 * x, TrainConfig(epochs=200, validation_fraction=0.0, patience=0))
        assert len(hist.train_loss) <= 200
        assert mse_loss(best, x, 2 * x) < 1e-4

    def test_zero_epochs_is_noop(self):
        m = init_model([2, 4, 1], seed=3)
        best, hist = train(m, np.ones((5, 2)), np.ones(5), TrainConfig(epochs=0))
        assert hist.train_loss == []
        for a, b in zip(best.weights + best.biases, m.weights + m.biases):
            np.testing.assert_array_equal(a, b)

    def test_input_model_not_mutated(self):
        m = init_model([2, 4, 1], seed=3)
        before = [w.copy() for w in m.weights]
        train(m, np.random.default_rng(0).normal(size=(50, 2)), np.ones(50), TrainConfig(epochs=3))
        for a, b in zip(before, m.weights):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(200, 3)), rng.normal(size=200)
        cfg = TrainConfig(epochs=15, seed=4)
        a = train(init_model([3, 8, 1], 4, compute_stats(X)), X, Y, cfg)
        b = train(init_model([3, 8, 1], 4, compute_stats(X)), X, Y, cfg)
        assert a[1].train_loss == b[1].train_loss
        assert json.dumps(a[0].to_dict()) == json.dumps(b[0].to_dict())

    def test_vanishing_learning_rate(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(100, 2)), rng.normal(size=100)
        m = init_model([2, 6, 1], 0, compute_stats(X))
        best, _ = train(m, X, Y, TrainConfig(epochs=5, learning_rate=1e-20, validation_fraction=0.0))
        for a, b in zip(best.weights + best.biases, m.weights + m.biases):
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_returns_best_validation_model(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 2))
        Y = X[:, 0] - X[:, 1] ** 2
        best, hist = train(init_model([2, 8, 1], 0, compute_stats(X)), X, Y, TrainConfig(epochs=40))
        assert hist.best_loss == min(hist.val_loss)
        running = np.minimum.accumulate(hist.val_loss)
        assert np.all(np.diff(running) <= 0)

    def test_normalization_invariance(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(300, 3))
        Y = X @ np.array([1.0, 2.0, 3.0]) + np.sin(X[:, 0])
        cfg = TrainConfig(epochs=20)
        ref = train(init_model([3, 8, 1], 1, compute_stats(X)), X, Y, cfg)[1].train_loss
        X2 = 4.0 * X  # power-of-two scaling is exact in floating point
        assert train(init_model([3, 8, 1], 1, compute_stats(X2)), X2, Y, cfg)[1].train_loss == ref
        X3 = X * np.array([3.0, 0.1, 7.0]) + np.array([1.0, -5.0, 2.0])
        mean, std = compute_stats(X3)
        np.testing.assert_allclose(normalize((mean, std), X3), normalize(compute_stats(X), X), atol=1e-12)
        other = train(init_model([3, 8, 1], 1, (mean, std)), X3, Y, cfg)[1].train_loss
        np.testing.assert_allclose(other, ref, rtol=1e-9)

    def test_divergence_raises_with_last_good(self):
        X = np.linspace(-1, 1, 64)[:, None]
        Y = 1e200 * X
        m = init_model([1, 4, 1], 0, compute_stats(X))
        with pytest.raises(TrainingError) as info:
            train(m, X, Y, TrainConfig(epochs=50, learning_rate=1e10, optimizer="sgd", validation_fraction=0.0))
        assert info.value.epoch is not None and "epoch" in str(info.value)
        assert isinstance(info.value.last_good, FnnModel)

    def test_early_stopping(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(200, 2)), rng.normal(size=200)  # pure noise: validation stalls
        _, hist = train(init_model([2, 16, 1], 0, compute_stats(X)), X, Y, TrainConfig(epochs=500, patience=5))
        assert hist.stopped_early and len(hist.train_loss) < 500

    @pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"batch_size": 0}, {"epochs": -1},
                                        {"validation_fraction": 0.9}, {"optimizer": "rmsprop"},
                                        {"weight_decay": -1.0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestArtifact:
    def test_round_trip(self):
        m = random_network(np.random.default_rng(3))
        back = FnnModel.from_dict(json.loads(json.dumps(m.to_dict())))
        x = np.random.default_rng(4).normal(size=(5, m.n_inputs))
        np.testing.assert_array_equal(forward(back, x), forward(m, x))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            FnnModel([2, 1], [np.zeros((1, 3))], [np.zeros(1)], np.zeros(2), np.ones(2))


class TestEstimator:
    def test_fit_predict(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (400, 2))
        y = X[:, 0] * 2 - X[:, 1]
        reg = FNNRegressor(hidden_layer_sizes=(16,), epochs=150, patience=0).fit(X, y)
        assert reg.predict(X).shape == (400,)
        assert reg.score(X, y) > 0.99
        assert reg.n_features_in_ == 2

    def test_params_and_clone(self):
        reg = FNNRegressor(hidden_layer_sizes=(4,), learning_rate=0.01)
        assert reg.get_params()["learning_rate"] == 0.01
        assert clone(reg).get_params() == reg.get_params()

    def test_predict_before_fit(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            FNNRegressor().predict(np.ones((2, 2)))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            FNNRegressor(epochs=1).fit(np.array([[1.0, np.inf]]), np.array([1.0]))
