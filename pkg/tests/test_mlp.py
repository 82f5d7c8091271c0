import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nnpattern import mlp
from nnpattern.mlp import (
    MlpModel,
    TrainConfig,
    TrainingDiverged,
    batch_loss,
    classify_ber,
    forward,
    gradient,
    gradient_check,
    init_model,
    load_model,
    make_windows,
    numeric_gradient,
    save_model,
    train_nesterov,
    unpack,
)
from nnpattern.seqgen import GRAY_MAP, prbs_pattern, repeat_to_length


def zero_model(sizes):
    return MlpModel(sizes, np.zeros(mlp.n_params(sizes)))


def sample(n_in, n_classes, n=32, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, n_in)), rng.integers(0, n_classes, n)


class TestWindows:
    def test_count(self):
        ds = make_windows(np.arange(100.0), np.zeros(100), 13)
        assert len(ds) == 88
        assert ds.windows.shape == (88, 13)
        assert ds.center_offset == 6

    def test_centre_alignment(self):
        x = np.random.default_rng(1).standard_normal(60)
        ds = make_windows(x, np.arange(60), 9)
        for i in range(len(ds)):
            assert ds.windows[i, 4] == x[i + 4]
            assert ds.labels[i] == i + 4

    def test_two_samples_per_symbol(self):
        n_sym = 50
        x = np.arange(2 * n_sym, dtype=float)
        ds = make_windows(x, np.arange(n_sym), 13, stride=2)
        centres = ds.windows[:, ds.center_offset]
        np.testing.assert_array_equal(centres, 2 * ds.labels)
        assert ds.labels[0] == 3  # first symbol whose window fits
        assert ds.labels[-1] == n_sym - 4

    def test_windows_are_views(self):
        x = np.zeros(1000)
        ds = make_windows(x, np.zeros(1000), 33)
        assert np.shares_memory(ds.windows, ds.samples)

    def test_even_length_rejected(self):
        with pytest.raises(ValueError):
            make_windows(np.zeros(20), np.zeros(20), 4)

    def test_too_long_rejected(self):
        with pytest.raises(ValueError):
            make_windows(np.zeros(20), np.zeros(20), 21)

    def test_headline_training_size(self):
        L = 13
        n = (1 << 19) + L - 1
        ds = make_windows(np.zeros(n), np.zeros(n), L)
        assert len(ds) == 1 << 19


class TestForward:
    def test_zero_model_is_uniform(self):
        for k in (2, 4):
            p = forward(zero_model((5, 8, k)), np.ones(5))
            np.testing.assert_allclose(p, 1.0 / k)

    def test_softmax_shift_invariance(self):
        m = init_model((7, 8, 4), seed=3)
        x = np.random.default_rng(0).standard_normal((10, 7))
        shifted = m.copy()
        shifted.biases[-1][...] += 123.0
        np.testing.assert_allclose(forward(m, x), forward(shifted, x), rtol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(
        arrays(np.float64, 9, elements=st.floats(-1e3, 1e3)),
        st.integers(0, 2**31),
        st.sampled_from([2, 4]),
        st.sampled_from([(8,), (64, 64)]),
    )
    def test_output_is_distribution(self, x, seed, k, hidden):
        p = forward(init_model((9, *hidden, k), seed), x)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0) and np.all(p <= 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_model((5, 8, 2)), np.zeros(6))

    def test_leaky_relu(self):
        m = zero_model((1, 1, 2))
        (w1, b1), (w2, b2) = unpack(m.params, m.layer_sizes)
        w1[...] = 1.0
        w2[0, 1] = 1.0
        # logit difference equals the hidden activation
        p_pos = forward(m, np.array([2.0]))
        p_neg = forward(m, np.array([-2.0]))
        assert math.log(p_pos[1] / p_pos[0]) == pytest.approx(2.0)
        assert math.log(p_neg[1] / p_neg[0]) == pytest.approx(-0.02)


class TestLoss:
    def test_perfect_predictor(self):
        m = zero_model((3, 2, 2))
        m.biases[-1][...] = [0.0, 1000.0]
        ds = make_windows(np.zeros(10), np.ones(10), 3)
        assert mlp.loss(m, ds) == 0.0

    @pytest.mark.parametrize("k", [2, 4])
    def test_uniform_predictor(self, k):
        ds = make_windows(np.zeros(40), np.arange(40) % k, 5)
        assert mlp.loss(zero_model((5, 8, k)), ds) == pytest.approx(math.log(k), rel=1e-12)

    def test_empty_dataset(self):
        ds = make_windows(np.zeros(5), np.zeros(5), 5)
        ds.labels = ds.labels[:0]
        with pytest.raises(ValueError):
            mlp.loss(zero_model((5, 2, 2)), ds)


class TestGradient:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("hidden", [(8,), (64, 64)])
    @pytest.mark.parametrize("k", [2, 4])
    def test_backprop_matches_finite_differences(self, seed, hidden, k):
        m = init_model((7, *hidden, k), seed)
        x, y = sample(7, k, seed=seed + 100)
        assert gradient_check(m, x, y) < 1e-5

    def test_with_input_normalization(self):
        m = init_model((7, 8, 4), 1)
        m.input_shift, m.input_scale = 0.3, 2.5
        x, y = sample(7, 4, seed=9)
        assert gradient_check(m, x, y) < 1e-5

    def test_zero_loss_has_zero_gradient(self):
        m = zero_model((3, 4, 2))
        m.biases[-1][...] = [0.0, 1000.0]
        x, _ = sample(3, 2, n=16)
        _, g = gradient(m, x, np.ones(16, dtype=int))
        assert np.linalg.norm(g) < 1e-8

    def test_step_doubling_is_second_order(self):
        # smooth region: output layer only, so central differences err by O(h^2)
        m = init_model((6, 8, 4), 2)
        x, y = sample(6, 4, seed=3)
        exact = gradient(m, x, y)[1]
        out_slice = slice(mlp.n_params((6, 8)), None)
        errs = []
        for h in (2e-3, 4e-3):
            errs.append(np.linalg.norm((numeric_gradient(m, x, y, h) - exact)[out_slice]))
        assert errs[1] / errs[0] == pytest.approx(4.0, rel=0.1)

    def test_loss_value_matches_forward(self):
        m = init_model((5, 8, 2), 4)
        x, y = sample(5, 2)
        p = forward(m, x)
        expected = -np.mean(np.log(p[np.arange(y.size), y]))
        assert gradient(m, x, y)[0] == pytest.approx(expected, rel=1e-12)
        assert batch_loss(m, x, y) == pytest.approx(expected, rel=1e-12)


def tiny_dataset(n_in=4, n=256, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n + n_in - 1)
    labels = (np.convolve(x, np.ones(n_in), mode="full")[: x.size] > 0).astype(int)
    return make_windows(x, np.roll(labels, -(n_in // 2)), n_in | 1)


class TestTraining:
    def test_nesterov_update_rule(self):
        ds = tiny_dataset()
        m0 = init_model((5, 3, 2), 1)
        cfg = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=len(ds), epochs=2, decay_fraction=1.0)
        trained = train_nesterov(m0, ds, cfg, normalize=False)
        # one full batch per epoch: replay the two updates by hand
        x, y = ds.windows, ds.labels
        w, v = m0.params.copy(), np.zeros_like(m0.params)
        for _ in range(2):
            g = gradient(m0, x, y, w + 0.9 * v)[1]
            v = 0.9 * v - 0.05 * g
            w = w + v
        np.testing.assert_allclose(trained.params, w, rtol=1e-12, atol=1e-14)

    def test_zero_momentum_is_sgd(self):
        ds = tiny_dataset()
        m0 = init_model((5, 3, 2), 2)
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, batch_size=len(ds), epochs=1)
        trained = train_nesterov(m0, ds, cfg, normalize=False)
        expected = m0.params - 0.1 * gradient(m0, ds.windows, ds.labels)[1]
        np.testing.assert_allclose(trained.params, expected, rtol=1e-12, atol=1e-15)

    def test_separable_pair(self):
        ds = make_windows(np.array([-1.0, 1.0]), np.array([0, 1]), 1)
        cfg = TrainConfig(learning_rate=0.1, batch_size=2, epochs=500, decay_fraction=1.0)
        m = train_nesterov(init_model((1, 8, 2), 0), ds, cfg, normalize=False)
        assert mlp.loss(m, ds) < 1e-2

    def test_reproducible(self):
        ds = tiny_dataset(seed=5)
        cfg = TrainConfig(epochs=3, rng_seed=7)
        a = train_nesterov(init_model((5, 8, 2), 1), ds, cfg)
        b = train_nesterov(init_model((5, 8, 2), 1), ds, cfg)
        np.testing.assert_array_equal(a.params, b.params)

    @pytest.mark.parametrize("scale,exact", [(4.0, True), (3.0, False)])
    def test_input_scale_does_not_matter(self, scale, exact):
        ds = tiny_dataset(seed=6)
        scaled = make_windows(ds.samples * scale, np.concatenate([[0, 0], ds.labels, [0, 0]]), 5)
        np.testing.assert_array_equal(scaled.labels, ds.labels)
        cfg = TrainConfig(epochs=4, rng_seed=3)
        ha, hb = [], []
        train_nesterov(init_model((5, 8, 2), 1), ds, cfg, history=ha)
        train_nesterov(init_model((5, 8, 2), 1), scaled, cfg, history=hb)
        if exact:
            assert ha == hb
        else:
            np.testing.assert_allclose(ha, hb, rtol=1e-9)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detected(self):
        ds = tiny_dataset(seed=8)
        cfg = TrainConfig(learning_rate=1e6, momentum=0.9, batch_size=8, epochs=3)
        with pytest.raises(TrainingDiverged):
            train_nesterov(init_model((5, 8, 2), 1), ds, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)


def parity_model(L, ahead, slope=0.01, gain=20.0):
    """Hand-set weights computing b[c] = b[c + ahead] XOR b[c - 1] from +/-1 inputs."""
    c = (L - 1) // 2
    m = zero_model((L, 2, 2))
    m.leaky_slope = slope
    (w1, _), (w2, b2) = unpack(m.params, m.layer_sizes)
    w1[c + ahead, 0], w1[c - 1, 0] = 1.0, -1.0
    w1[c + ahead, 1], w1[c - 1, 1] = -1.0, 1.0
    w2[:, 1] = gain
    b2[1] = -gain
    return m


class TestPatternPrediction:
    @pytest.mark.parametrize("name,L,ahead", [("prbs7", 13, 6), ("prbs15", 29, 14)])
    def test_parity_predictor_never_looks_at_the_centre(self, name, L, ahead):
        bits = repeat_to_length(prbs_pattern(name, extended=False), 40000)
        ds = make_windows(2.0 * bits.bits - 1.0, bits.bits, L)
        m = parity_model(L, ahead)
        assert m.weights[0][(L - 1) // 2].tolist() == [0.0, 0.0]
        assert mlp.loss(m, ds) < 1e-2
        assert classify_ber(m, ds)[0] == 0.0

    def test_zero_extension_breaks_parity_twice_per_period(self):
        bits = repeat_to_length(prbs_pattern("prbs7"), 128 * 40 + 12)
        ds = make_windows(2.0 * bits.bits - 1.0, bits.bits, 13)
        _, errors, n = classify_ber(parity_model(13, 6), ds)
        assert n == 128 * 40
        assert errors == 2 * 40


class TestClassify:
    def test_perfect_model_on_noiseless_data(self):
        m = zero_model((1, 1, 2))
        (w1, _), (w2, _) = unpack(m.params, m.layer_sizes)
        w1[...] = 1.0
        w2[0, 1] = 1.0
        bits = np.random.default_rng(0).integers(0, 2, 1000)
        ds = make_windows(2.0 * bits - 1.0, bits, 1)
        assert classify_ber(m, ds) == (0.0, 0, 1000)

    def test_zero_model_guesses_class_zero(self):
        bits = np.random.default_rng(1).integers(0, 2, 1 << 16)
        ds = make_windows(np.zeros(bits.size), bits, 5)
        ber, errors, n = classify_ber(zero_model((5, 8, 2)), ds)
        assert errors == int(ds.labels.sum())
        assert abs(ber - 0.5) <= 4 * math.sqrt(0.25 / n)

    def test_argmax_invariant_to_monotone_transform(self):
        m = init_model((5, 8, 4), 2)
        x = np.random.default_rng(2).standard_normal((500, 5))
        p = forward(m, x)
        np.testing.assert_array_equal(np.argmax(p, 1), np.argmax(np.log(p) * 3 + 7, 1))
        np.testing.assert_array_equal(np.argmax(p, 1), mlp.predict(m, x))

    def test_gray_bit_errors(self):
        sent = np.array([0, 1, 2, 3, 0, 1])
        decided = np.array([1, 2, 3, 2, 3, 1])
        # 0->1, 1->2, 2->3, 3->2 adjacent (1 bit each); 0->3 is one bit under Gray
        assert mlp.symbol_bit_errors(decided, sent, GRAY_MAP) == (5, 12)

    def test_four_class_ber(self):
        m = zero_model((1, 1, 4))
        sym = np.array([0, 1, 2, 3] * 25)
        ds = make_windows(np.zeros(sym.size), sym, 1)
        ber, errors, bits = classify_ber(m, ds, GRAY_MAP)
        # all decided as 0 -> errors: 1 (01), 2 (11), 1 (10) per group of four
        assert (errors, bits) == (4 * 25, 200)


def test_save_load_round_trip(tmp_path):
    m = init_model((9, 64, 64, 4), 5)
    m.input_shift, m.input_scale = 0.1234567890123, 3.3
    path = tmp_path / "model.txt"
    save_model(m, path)
    back = load_model(path)
    assert back.layer_sizes == m.layer_sizes
    assert back.leaky_slope == m.leaky_slope
    assert back.seed == m.seed
    assert (back.input_shift, back.input_scale) == (m.input_shift, m.input_scale)
    np.testing.assert_array_equal(back.params, m.params)
    assert path.read_text().splitlines()[0].startswith("mlp layers=9,64,64,4")


def test_he_init_statistics():
    m = init_model((200, 400, 2), 0)
    w = m.weights[0]
    assert w.std() == pytest.approx(math.sqrt(2 / 200), rel=0.02)
    assert np.all(m.biases[0] == 0)
