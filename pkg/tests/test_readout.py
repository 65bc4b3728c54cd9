import numpy as np
import pytest

from spikeseq.readout import (
    IntegratorState,
    QuantizedWeights,
    ReadoutModel,
    TrainConfig,
    accuracy,
    calibrate_null_thresholds,
    forward,
    forward_batch,
    loss_and_grad,
    memory_footprint,
    predict,
    predict_with_null,
    prune_iterative,
    quantize_int8,
    train,
)


def small_model(n_classes=3, n_units=5, seed=0):
    return ReadoutModel.create(n_classes, n_units, np.random.default_rng(seed), 0.5)


class TestForward:
    def test_zero_raster_zero_scores(self):
        model = small_model()
        raster = np.zeros((10, 5), dtype=np.uint8)
        np.testing.assert_array_equal(forward(model, raster), np.zeros(3))

    def test_single_active_unit_scales_column(self):
        model = small_model()
        raster = np.zeros((20, 5), dtype=np.uint8)
        raster[[1, 4, 9], 2] = 1
        np.testing.assert_allclose(forward(model, raster), 3 * model.weights[:, 2])

    def test_matches_stepwise_integrator(self):
        rng = np.random.default_rng(8)
        model = small_model()
        raster = (rng.random((40, 5)) < 0.3).astype(np.uint8)
        integ = IntegratorState(model)
        for row in raster:
            integ.step(row)
        np.testing.assert_allclose(forward(model, raster), integ.value())

    def test_shape_mismatch(self):
        model = small_model()
        with pytest.raises(ValueError):
            forward(model, np.zeros((4, 7)))


class TestTrain:
    def test_separable_counts_reach_full_accuracy(self):
        # two classes firing disjoint unit groups
        rng = np.random.default_rng(1)
        data = []
        for _ in range(30):
            c0 = np.zeros(6)
            c0[:3] = rng.integers(2, 6, size=3)
            data.append((c0, 0))
            c1 = np.zeros(6)
            c1[3:] = rng.integers(2, 6, size=3)
            data.append((c1, 1))
        model = ReadoutModel.create(2, 6, rng, 0.01)
        cfg = TrainConfig(epochs=50, batch_size=10)
        train(model, data, cfg, rng)
        X = np.stack([x for x, _ in data])
        y = np.array([l for _, l in data])
        assert accuracy(model, X, y) == 1.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n_classes = int(rng.integers(2, 5))
            n_units = int(rng.integers(2, 7))
            n = int(rng.integers(2, 9))
            model = ReadoutModel.create(n_classes, n_units, rng, 0.7)
            X = rng.integers(0, 5, size=(n, n_units)).astype(np.float64)
            y = rng.integers(0, n_classes, size=n)
            _, grad = loss_and_grad(model, X, y)
            h = 1e-6
            num = np.zeros_like(model.weights)
            for i in range(n_classes):
                for j in range(n_units):
                    model.weights[i, j] += h
                    lp, _ = loss_and_grad(model, X, y)
                    model.weights[i, j] -= 2 * h
                    lm, _ = loss_and_grad(model, X, y)
                    model.weights[i, j] += h
                    num[i, j] = (lp - lm) / (2 * h)
            denom = max(np.abs(num).max(), 1e-12)
            assert np.abs(grad - num).max() / denom < 1e-4

    def test_zero_learning_rate_keeps_weights(self):
        rng = np.random.default_rng(3)
        model = small_model()
        before = model.weights.copy()
        data = [(np.ones(5), 0), (2 * np.ones(5), 1)]
        train(model, data, TrainConfig(learning_rate=0.0, epochs=5), rng)
        np.testing.assert_array_equal(model.weights, before)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(small_model(), [], TrainConfig(epochs=1))


def toy_data(rng, n_classes=3, n_units=12, n=60):
    data = []
    for _ in range(n):
        c = int(rng.integers(0, n_classes))
        counts = rng.poisson(0.5, size=n_units).astype(np.float64)
        lo = c * (n_units // n_classes)
        counts[lo : lo + n_units // n_classes] += rng.integers(2, 6)
        data.append((counts, c))
    return data


class TestPrune:
    def test_single_step_density(self):
        rng = np.random.default_rng(4)
        data = toy_data(rng)
        model = ReadoutModel.create(3, 12, rng, 0.5)
        train(model, data, TrainConfig(epochs=20), rng)
        cfg = TrainConfig(target_prune_rate=0.05, epochs=20)
        prune_iterative(model, data, cfg, rng)
        expected = round(0.05 * model.weights.size)
        assert abs((model.prune_mask == 0).sum() - expected) <= 1

    def test_zero_target_noop(self):
        model = small_model()
        before = model.prune_mask.copy()
        prune_iterative(model, [(np.ones(5), 0)], TrainConfig(), None)
        np.testing.assert_array_equal(model.prune_mask, before)

    def test_mask_monotone_and_pruned_contribute_zero(self):
        rng = np.random.default_rng(5)
        data = toy_data(rng)
        model = ReadoutModel.create(3, 12, rng, 0.5)
        train(model, data, TrainConfig(epochs=10), rng)
        prev = model.prune_mask.copy()
        for target in (0.2, 0.4, 0.6):
            cfg = TrainConfig(target_prune_rate=target)
            prune_iterative(model, data, cfg, rng)
            assert np.all(model.prune_mask <= prev)
            prev = model.prune_mask.copy()
        # pruned entries contribute exactly zero to forward and gradient
        counts = np.arange(12, dtype=np.float64)
        w_eff = model.effective_weights()
        assert np.all(w_eff[model.prune_mask == 0] == 0)
        _, grad = loss_and_grad(model, counts[None, :], np.array([0]))
        assert np.all(grad[model.prune_mask == 0] == 0)

    def test_reaches_requested_rate(self):
        rng = np.random.default_rng(6)
        data = toy_data(rng)
        model = ReadoutModel.create(3, 12, rng, 0.5)
        train(model, data, TrainConfig(epochs=5), rng)
        prune_iterative(model, data, TrainConfig(target_prune_rate=0.5), rng)
        assert model.prune_rate() >= 0.5


class TestQuantize:
    def test_scale_from_max_abs(self):
        w = np.array([[1.27, -0.5], [0.5, 0.02]])
        model = ReadoutModel(w, np.ones_like(w, dtype=np.uint8))
        quantize_int8(model)
        assert model.quantized.scale == pytest.approx(0.01)
        assert model.quantized.values[0, 0] == 127
        assert model.quantized.values[1, 0] == 50

    def test_roundtrip_error_bounded(self):
        rng = np.random.default_rng(7)
        w = rng.normal(0, 1, size=(4, 9))
        model = ReadoutModel(w, np.ones_like(w, dtype=np.uint8))
        quantize_int8(model)
        q = model.quantized
        back = q.values.astype(np.float64) * q.scale
        assert np.abs(back - w).max() <= q.scale / 2 + 1e-12

    def test_all_zero_weights(self):
        w = np.zeros((2, 3))
        model = ReadoutModel(w, np.ones_like(w, dtype=np.uint8))
        quantize_int8(model)
        assert model.quantized.scale == 1.0
        assert not model.quantized.values.any()

    def test_quantized_forward_close_to_float(self):
        rng = np.random.default_rng(8)
        data = toy_data(rng)
        model = ReadoutModel.create(3, 12, rng, 0.5)
        train(model, data, TrainConfig(epochs=20), rng)
        quantize_int8(model)
        X = np.stack([x for x, _ in data])
        f = forward_batch(model, X)
        q = forward_batch(model, X, quantized=True)
        bound = model.quantized.scale * X.sum(axis=1).max()
        assert np.abs(f - q).max() <= bound + 1e-9


class TestNullPrediction:
    def test_silent_raster_is_null(self):
        model = small_model()
        model.null_thresholds = np.full(3, 0.5)
        assert predict_with_null(model, np.zeros((5, 5))) is None

    def test_clear_winner(self):
        w = np.eye(3, 5)
        model = ReadoutModel(w, np.ones_like(w, dtype=np.uint8))
        model.null_thresholds = np.full(3, 0.5)
        counts = np.array([0.0, 5.0, 0.0, 0.0, 0.0])
        assert predict_with_null(model, counts) == 1

    def test_uncalibrated_rejected(self):
        with pytest.raises(ValueError):
            predict_with_null(small_model(), np.zeros(5))

    def test_calibration_covers_classes(self):
        rng = np.random.default_rng(9)
        data = toy_data(rng)
        model = ReadoutModel.create(3, 12, rng, 0.5)
        train(model, data, TrainConfig(epochs=20), rng)
        thr = calibrate_null_thresholds(model, data)
        assert thr.shape == (3,)
        with pytest.raises(ValueError):
            calibrate_null_thresholds(model, [(np.ones(12), 0)])


def footprint_oracle(spines, n_classes, r_p, bits, L):
    # independent term-by-term evaluation
    n_units = len(spines)
    mean = sum(spines) / n_units
    in_cons = sum(spines)
    out_w = n_units * (1 - r_p) * n_classes * bits
    intervals = sum(ns - 1 for ns in spines) * 8
    state = sum(ns - 1 for ns in spines) * int(L // (mean - 1))
    integ = n_classes * 8
    return in_cons + out_w + intervals + state + integ


class TestMemoryFootprint:
    def test_reference_substitution(self):
        assert memory_footprint(1, [3], 2, 0.0, 8, 4) == 55.0

    def test_full_pruning_removes_weight_term(self):
        with_w = memory_footprint(4, [3] * 4, 5, 0.0, 8, 16)
        without = memory_footprint(4, [3] * 4, 5, 1.0, 8, 16)
        assert with_w - without == 4 * 5 * 8

    def test_matches_independent_evaluator(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            n_units = int(rng.integers(1, 30))
            spines = [int(rng.integers(2, 7)) for _ in range(n_units)]
            n_classes = int(rng.integers(1, 12))
            r_p = float(rng.uniform(0, 1))
            bits = int(rng.choice([8, 32]))
            L = int(rng.integers(1, 900))
            assert memory_footprint(
                n_units, spines, n_classes, r_p, bits, L
            ) == pytest.approx(footprint_oracle(spines, n_classes, r_p, bits, L))

    def test_monotone_in_each_argument(self):
        base = memory_footprint(4, [3] * 4, 5, 0.3, 8, 100)
        assert memory_footprint(5, [3] * 5, 5, 0.3, 8, 100) >= base
        assert memory_footprint(4, [3] * 4, 6, 0.3, 8, 100) >= base
        assert memory_footprint(4, [3] * 4, 5, 0.3, 32, 100) >= base
        assert memory_footprint(4, [3] * 4, 5, 0.3, 8, 200) >= base

    def test_degenerate_mean_rejected(self):
        with pytest.raises(ValueError):
            memory_footprint(2, [1, 1], 2, 0.0, 8, 10)
