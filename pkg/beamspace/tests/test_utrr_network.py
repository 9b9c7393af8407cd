from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from beamspace.config import ExperimentConfig
from beamspace.exceptions import (
    EmptyBatchError,
    EmptyEnsembleError,
    InvalidDimensionError,
    TopKRangeError,
    TraceMismatchError,
    TrainingDivergedError,
)
from beamspace.sensing import Dataset, bernoulli_matrix, build_dataset
from beamspace.trr_solvers import pgd_ridge
from beamspace.utrr_network import (
    Gradients,
    TrainConfig,
    UtrrLayer,
    backward,
    ensemble_predict,
    forward,
    init_params,
    loss,
    predict,
    sgd_update,
    train,
)


FD_STEP = 1e-6
KINK_MARGIN = 1e-4


def with_alphas(params, alpha):
    return replace(params, layers=tuple(replace(layer, alpha=alpha) for layer in params.layers))


def random_net(rng, m=6, n=10, n_layers=3, top_k=0, rcc=True):
    phi = bernoulli_matrix(m, n, rng)
    params = init_params(phi, n_layers, top_k, rcc=rcc)
    layers = tuple(
        UtrrLayer(
            a_matrix=layer.a_matrix + 0.1 * rng.standard_normal(layer.a_matrix.shape),
            rho=float(rng.uniform(0.5, 1.5)),
            alpha=float(rng.uniform(0.05, 0.2)),
        )
        for layer in params.layers
    )
    return replace(params, layers=layers)


def away_from_kinks(params, trace):
    """True when no ReLU input or top-K boundary sits within KINK_MARGIN."""
    for pre in trace.pre_activations:
        if np.min(np.abs(pre)) <= KINK_MARGIN:
            return False
    for t, z in enumerate(trace.states[:-1]):
        k = params.layer_top_k(t)
        if k == 0 or k >= z.shape[1]:
            continue
        mags = -np.sort(-np.abs(z), axis=1)
        inside, outside = mags[:, k - 1], mags[:, k]
        if np.any((inside > 0) & (inside - outside <= KINK_MARGIN)):
            return False
    return True


def shifted(params, t, name, index, delta):
    layer = params.layers[t]
    if name == "a_matrix":
        a = layer.a_matrix.copy()
        a[index] += delta
        new_layer = replace(layer, a_matrix=a)
    else:
        new_layer = replace(layer, **{name: getattr(layer, name) + delta})
    layers = list(params.layers)
    layers[t] = new_layer
    return replace(params, layers=tuple(layers))


def central_difference(params, t, name, index, y, x):
    up = loss(predict(shifted(params, t, name, index, FD_STEP), y), x)
    down = loss(predict(shifted(params, t, name, index, -FD_STEP), y), x)
    return (up - down) / (2 * FD_STEP)


def small_splits(seed=1, n_train=12, n_val=4):
    cfg = ExperimentConfig(
        n_antennas=8, n_measurements=4, n_users=2, n_paths=2,
        n_train=n_train, n_val=n_val, n_test=2, snr_db=20.0,
    )
    return build_dataset(cfg, seed)


class InitParamsTests(SimpleTestCase):

    def setUp(self):
        self.phi = bernoulli_matrix(8, 16, np.random.default_rng(0))

    def test_parameter_count(self):
        self.assertEqual(init_params(self.phi, 3, 4).parameter_count, 774)

    def test_every_layer_starts_from_lifted_phi(self):
        params = init_params(self.phi, 3, 4)
        for layer in params.layers:
            assert_array_equal(layer.a_matrix, np.hstack([self.phi.entries, -self.phi.entries]))
            self.assertEqual((layer.rho, layer.alpha), (1.0, 0.1))

    def test_layers_do_not_share_storage(self):
        params = init_params(self.phi, 2, 0)
        self.assertFalse(np.shares_memory(params.layers[0].a_matrix, params.layers[1].a_matrix))

    def test_same_phi_same_params(self):
        a, b = init_params(self.phi, 2, 4), init_params(self.phi, 2, 4)
        for la, lb in zip(a.layers, b.layers):
            assert_array_equal(la.a_matrix, lb.a_matrix)

    def test_rcc_top_k_only_in_last_layer(self):
        params = init_params(self.phi, 3, 4)
        self.assertEqual([params.layer_top_k(t) for t in range(3)], [0, 0, 4])
        full = init_params(self.phi, 3, 4, rcc=False)
        self.assertEqual([full.layer_top_k(t) for t in range(3)], [4, 4, 4])

    def test_zero_layers_rejected(self):
        with self.assertRaises(InvalidDimensionError):
            init_params(self.phi, 0, 4)

    def test_top_k_range(self):
        with self.assertRaises(TopKRangeError):
            init_params(self.phi, 2, 33)


class ForwardTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.phi = bernoulli_matrix(6, 10, self.rng)

    def test_zero_steps_return_adjoint(self):
        params = with_alphas(init_params(self.phi, 4, 3), 0.0)
        y = self.rng.standard_normal(6)
        x_hat, _ = forward(params, y)
        assert_allclose(x_hat, self.phi.entries.T @ y, atol=1e-14)

    def test_zero_measurement(self):
        x_hat, _ = forward(init_params(self.phi, 3, 4), np.zeros(6))
        assert_array_equal(x_hat, np.zeros(10))

    def test_batch_matches_rows(self):
        params = random_net(self.rng, top_k=4)
        y = self.rng.standard_normal((5, 6))
        batch, _ = forward(params, y)
        for i in range(5):
            assert_allclose(batch[i], predict(params, y[i]), atol=1e-14)

    def test_trace_shapes(self):
        params = init_params(self.phi, 3, 2)
        _, trace = forward(params, self.rng.standard_normal((2, 6)))
        self.assertEqual(len(trace.states), 4)
        self.assertEqual(len(trace.pre_activations), 3)
        self.assertEqual([m is None for m in trace.masks], [True, True, False])
        self.assertIsNone(forward(params, np.zeros(6), keep_trace=False)[1])

    def test_single_layer_matches_scalar_loop(self):
        phi = bernoulli_matrix(2, 4, np.random.default_rng(5))
        params = init_params(phi, 1, 0)
        layer = params.layers[0]
        y = np.array([0.7, -0.2])

        a, p = layer.a_matrix, phi.entries
        x0 = [sum(p[i, j] * y[i] for i in range(2)) for j in range(4)]
        z = [max(v, 0.0) for v in x0] + [max(-v, 0.0) for v in x0]
        r = [sum(a[i, j] * z[j] for j in range(8)) - y[i] for i in range(2)]
        out = []
        for j in range(8):
            g = sum(r[i] * a[i, j] for i in range(2)) + layer.rho * z[j]
            out.append(0.5 * (max(z[j] - layer.alpha * g, 0.0) + z[j]))
        expected = [out[j] - out[j + 4] for j in range(4)]

        assert_allclose(predict(params, y), expected, atol=1e-12)

    def test_rcc_network_is_unfolded_ridge(self):
        params = init_params(self.phi, 5, 0)
        y = self.rng.standard_normal(6)
        report = pgd_ridge(self.phi, y, lambda2=0.5, step_rule=[0.1] * 5, eps=0.0, mixing=0.5)
        assert_allclose(predict(params, y), report.solution, atol=1e-12)
        self.assertEqual(report.iterations_run, 5)


class LossTests(SimpleTestCase):

    def test_exact_prediction(self):
        x = np.array([[1.0, -2.0, 3.0]])
        self.assertEqual(loss(x, x), 0.0)

    def test_unit_offset(self):
        x = np.array([0.5, 0.25, -1.0])
        self.assertAlmostEqual(loss(x + np.array([1.0, 0.0, 0.0]), x), 1.0, places=14)

    def test_batch_mean(self):
        x = np.zeros((2, 2))
        x_hat = np.array([[1.0, 1.0], [2.0, 0.0]])
        self.assertEqual(loss(x_hat, x), 3.0)

    def test_empty_batch(self):
        with self.assertRaises(EmptyBatchError):
            loss(np.zeros((0, 3)), np.zeros((0, 3)))


class BackwardTests(SimpleTestCase):

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 50:
            top_k = int(rng.choice([0, 2, 4]))
            params = random_net(rng, top_k=top_k, rcc=bool(checked % 2 == 0))
            y = rng.standard_normal((3, 6))
            x = rng.standard_normal((3, 10))
            _, trace = forward(params, y)
            if not away_from_kinks(params, trace):
                continue

            grads = backward(params, trace, y, x)
            for t in range(params.n_layers):
                numeric_a = np.zeros_like(params.layers[t].a_matrix)
                for index in np.ndindex(numeric_a.shape):
                    numeric_a[index] = central_difference(params, t, "a_matrix", index, y, x)
                assert_allclose(grads.a_matrices[t], numeric_a, rtol=1e-5, atol=1e-7)
                for name, analytic in (("rho", grads.rhos[t]), ("alpha", grads.alphas[t])):
                    numeric = central_difference(params, t, name, None, y, x)
                    assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7, err_msg=f"{name}[{t}]")
            checked += 1

    def test_zero_steps_freeze_decoders(self):
        rng = np.random.default_rng(4)
        params = with_alphas(random_net(rng, top_k=2), 0.0)
        y, x = rng.standard_normal((2, 6)), rng.standard_normal((2, 10))
        _, trace = forward(params, y)
        grads = backward(params, trace, y, x)
        for d_a in grads.a_matrices:
            assert_array_equal(d_a, np.zeros_like(d_a))
        assert_array_equal(grads.rhos, np.zeros(3))

    def test_zero_loss_sample_has_zero_gradients(self):
        rng = np.random.default_rng(5)
        params = random_net(rng, top_k=4)
        y = rng.standard_normal(6)
        x_hat, trace = forward(params, y)
        grads = backward(params, trace, y, x_hat)
        for d_a in grads.a_matrices:
            assert_array_equal(d_a, np.zeros_like(d_a))
        assert_array_equal(grads.rhos, np.zeros(3))
        assert_array_equal(grads.alphas, np.zeros(3))

    def test_trace_from_other_measurements(self):
        rng = np.random.default_rng(6)
        params = random_net(rng)
        _, trace = forward(params, rng.standard_normal(6))
        with self.assertRaises(TraceMismatchError):
            backward(params, trace, rng.standard_normal(6), np.zeros(10))

    def test_trace_from_other_depth(self):
        rng = np.random.default_rng(7)
        params = random_net(rng)
        y = rng.standard_normal(6)
        _, trace = forward(params, y)
        deeper = replace(params, layers=params.layers + params.layers[:1])
        with self.assertRaises(TraceMismatchError):
            backward(deeper, trace, y, np.zeros(10))


class SgdUpdateTests(SimpleTestCase):

    def setUp(self):
        self.params = random_net(np.random.default_rng(8))

    def test_zero_gradients(self):
        grads = Gradients(
            a_matrices=[np.zeros_like(layer.a_matrix) for layer in self.params.layers],
            rhos=np.zeros(3),
            alphas=np.zeros(3),
        )
        updated = sgd_update(self.params, grads, lr=0.5)
        for old, new in zip(self.params.layers, updated.layers):
            assert_array_equal(new.a_matrix, old.a_matrix)
            self.assertEqual((new.rho, new.alpha), (old.rho, old.alpha))

    def test_unit_step_on_own_values(self):
        grads = Gradients(
            a_matrices=[layer.a_matrix.copy() for layer in self.params.layers],
            rhos=np.array([layer.rho for layer in self.params.layers]),
            alphas=np.array([layer.alpha for layer in self.params.layers]),
        )
        for layer in sgd_update(self.params, grads, lr=1.0).layers:
            assert_array_equal(layer.a_matrix, np.zeros_like(layer.a_matrix))
            self.assertEqual((layer.rho, layer.alpha), (0.0, 0.0))

    def test_negative_rate(self):
        grads = Gradients([np.zeros((6, 20))] * 3, np.zeros(3), np.zeros(3))
        with self.assertRaises(InvalidDimensionError):
            sgd_update(self.params, grads, lr=-0.1)


class TrainConfigTests(SimpleTestCase):

    def test_equal_epochs_per_stage(self):
        cfg = TrainConfig(learning_rates=(0.1, 0.01, 0.001), max_epochs=6)
        self.assertEqual([cfg.stage_for(e) for e in range(6)], [0, 0, 1, 1, 2, 2])

    def test_more_stages_than_epochs(self):
        cfg = TrainConfig(learning_rates=(5, 4, 3, 2, 1), max_epochs=3)
        self.assertEqual([cfg.stage_for(e) for e in range(3)], [0, 1, 3])

    def test_invalid_values(self):
        with self.assertRaises(InvalidDimensionError):
            TrainConfig(batch_size=0)
        with self.assertRaises(InvalidDimensionError):
            TrainConfig(learning_rates=())


class TrainTests(SimpleTestCase):

    def setUp(self):
        self.train_set, self.val_set, _ = small_splits()
        self.params = init_params(self.train_set.phi_ref, 2, 2)
        self.cfg = TrainConfig(learning_rates=(0.01, 0.005), max_epochs=4, patience=10, batch_size=8, seed=3)

    def test_same_seed_same_history_and_params(self):
        first, h1 = train(self.params, self.train_set, self.val_set, self.cfg)
        second, h2 = train(self.params, self.train_set, self.val_set, self.cfg)
        self.assertEqual(h1.train_loss, h2.train_loss)
        self.assertEqual(h1.val_loss, h2.val_loss)
        self.assertEqual(h1.best_epoch, h2.best_epoch)
        for a, b in zip(first.layers, second.layers):
            assert_array_equal(a.a_matrix, b.a_matrix)
            self.assertEqual((a.rho, a.alpha), (b.rho, b.alpha))

    def test_history_records_every_epoch(self):
        _, history = train(self.params, self.train_set, self.val_set, self.cfg)
        self.assertEqual(history.epochs_run, 4)
        self.assertEqual(history.learning_rate, [0.01, 0.01, 0.005, 0.005])
        self.assertEqual(history.stage, [0, 0, 1, 1])
        self.assertFalse(history.stopped_early)

    def test_returns_best_validation_params(self):
        best, history = train(self.params, self.train_set, self.val_set, self.cfg)
        self.assertEqual(history.val_loss[history.best_epoch], history.best_val_loss)
        val_loss = loss(predict(best, self.val_set.measurements), self.val_set.labels)
        self.assertEqual(val_loss, history.best_val_loss)

    def test_no_improvement_stops_after_patience(self):
        cfg = TrainConfig(learning_rates=(0.0,), max_epochs=20, patience=1, batch_size=8, seed=0)
        _, history = train(self.params, self.train_set, self.train_set, cfg)
        self.assertEqual(history.epochs_run, 2)
        self.assertTrue(history.stopped_early)
        self.assertEqual(history.best_epoch, 0)

    def test_self_labelled_data_is_already_optimal(self):
        measurements = self.train_set.measurements
        labels = predict(self.params, measurements)
        data = Dataset(measurements, labels, self.train_set.phi_ref, None, "train")
        cfg = TrainConfig(learning_rates=(0.01,), max_epochs=5, patience=2, batch_size=8, seed=0)

        best, history = train(self.params, data, data, cfg)

        self.assertLess(history.best_val_loss, 1e-20)
        for a, b in zip(best.layers, self.params.layers):
            assert_allclose(a.a_matrix, b.a_matrix, atol=1e-12)
            self.assertAlmostEqual(a.rho, b.rho, places=12)

    def test_empty_sets_rejected(self):
        empty = Dataset(np.zeros((0, 4)), np.zeros((0, 8)), self.train_set.phi_ref, None, "val")
        with self.assertRaises(EmptyBatchError):
            train(self.params, self.train_set, empty, self.cfg)

    def test_non_finite_loss_aborts(self):
        broken = shifted(self.params, 0, "rho", None, np.nan)
        with self.assertRaises(TrainingDivergedError):
            train(broken, self.train_set, self.val_set, self.cfg)


class EnsembleTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(9)
        self.phi = bernoulli_matrix(6, 10, self.rng)
        self.y = self.rng.standard_normal((4, 6))

    def test_single_model(self):
        params = random_net(self.rng, top_k=2)
        assert_array_equal(ensemble_predict([params], self.y), predict(params, self.y))

    def test_identical_models(self):
        params = random_net(self.rng, top_k=2)
        assert_array_equal(ensemble_predict([params, params], self.y), predict(params, self.y))

    def test_mean_of_two(self):
        a, b = init_params(self.phi, 3, 0), init_params(self.phi, 3, 8)
        expected = (predict(a, self.y) + predict(b, self.y)) / 2
        assert_array_equal(ensemble_predict([a, b], self.y, threads=2), expected)

    def test_empty_ensemble(self):
        with self.assertRaises(EmptyEnsembleError):
            ensemble_predict([], self.y)
