import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eadkit.errors import StructuralError
from eadkit.ocr import render_digit
from eadkit.scnn import (DigitLabel, ScnnConfig, ScnnParams, cross_entropy_loss, evaluate,
                         gradient_check, init_params, load_params, predict_digit, save_params,
                         scnn_backward, scnn_forward, subsample_extract, train)
from eadkit.scnn import layers as L
from eadkit.scnn.network import backward_from_logits, param_shapes
from eadkit.scnn.training import numeric_gradient, relative_error

CFG = ScnnConfig()


def images(n, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n,) + CFG.input_shape)


def fd_check(forward, backward, x, seed=0, n=40):
    """Finite-difference check of dL/dx for L = sum(forward(x) * r)."""
    r = np.random.default_rng(seed).normal(size=forward(x).shape)
    dx = backward(r)
    idx = np.random.default_rng(seed + 1).choice(x.size, min(n, x.size), replace=False)
    num = numeric_gradient(lambda: float(np.sum(forward(x) * r)), x, idx)
    return relative_error(dx.reshape(-1)[idx], num).max()


class TestLayers:
    def test_conv_shape(self):
        x = images(1)
        w = np.zeros((21, 3, 3, 3))
        out, _ = L.conv_forward(x, w, np.zeros(21), stride=2)
        assert out.shape == (1, 21, 32, 24)

    def test_conv_zero_input_gives_bias(self):
        b = np.arange(21.0)
        out, _ = L.conv_forward(np.zeros((1, 3, 65, 50)), np.ones((21, 3, 3, 3)), b, 2)
        np.testing.assert_array_equal(out[0, :, 5, 7], b)

    def test_conv_single_window(self):
        rng = np.random.default_rng(0)
        x, w = rng.normal(size=(1, 3, 3, 3)), rng.normal(size=(2, 3, 3, 3))
        out, _ = L.conv_forward(x, w, np.array([0.5, -1.0]))
        assert out.shape == (1, 2, 1, 1)
        np.testing.assert_allclose(out[0, :, 0, 0], [np.sum(x * w[0]) + 0.5, np.sum(x * w[1]) - 1.0])

    def test_conv_channel_mismatch(self):
        with pytest.raises(StructuralError):
            L.conv_forward(np.zeros((1, 3, 9, 9)), np.zeros((2, 4, 3, 3)), np.zeros(2))

    def test_conv_gradient(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.normal(size=(2, 3, 9, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        fwd = lambda v: L.conv_forward(v, w, b, 2)[0]
        bwd = lambda r: L.conv_backward(r, L.conv_forward(x, w, b, 2)[1])[0]
        assert fd_check(fwd, bwd, x) < 1e-5

    def test_layer_norm_constant_input(self):
        out, _ = L.layer_norm_forward(np.full((1, 2, 3, 3), 4.0), np.ones(2), np.array([0.3, -0.7]))
        np.testing.assert_allclose(out[0, 0], 0.3)
        np.testing.assert_allclose(out[0, 1], -0.7)

    def test_layer_norm_two_values(self):
        out, _ = L.layer_norm_forward(np.array([-1.0, 1.0]).reshape(1, 1, 1, 2), np.ones(1), np.zeros(1))
        np.testing.assert_allclose(out.reshape(-1), [-1, 1], atol=1e-5)

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(2)
        x, g, s = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=3), rng.normal(size=3)
        fwd = lambda v: L.layer_norm_forward(v, g, s)[0]
        bwd = lambda r: L.layer_norm_backward(r, L.layer_norm_forward(x, g, s)[1])[0]
        assert fd_check(fwd, bwd, x) < 1e-5

    def test_leaky_relu(self):
        out, cache = L.leaky_relu_forward(np.array([-2.0, 0.0, 3.0]))
        np.testing.assert_allclose(out, [-0.02, 0.0, 3.0])
        np.testing.assert_allclose(L.leaky_relu_backward(np.ones(3), cache), [0.01, 0.01, 1.0])

    def test_subsample_shape(self):
        a = np.zeros((2, 21, 15, 11))
        assert subsample_extract(a, 0.5, 0.5).shape == (2, 21, 7, 5)

    def test_subsample_takes_lower_right(self):
        a = np.arange(15 * 11.0).reshape(1, 1, 15, 11)
        np.testing.assert_array_equal(subsample_extract(a, 0.5, 0.5)[0, 0], a[0, 0, 8:, 6:])

    def test_subsample_too_small(self):
        with pytest.raises(StructuralError):
            subsample_extract(np.zeros((1, 1, 2, 2)), 0.5, 0.5)
        with pytest.raises(StructuralError):
            subsample_extract(np.zeros((1, 1, 15, 11)), 1.0, 0.5)

    def test_cross_entropy_values(self):
        assert L.cross_entropy(np.full(21, 1 / 21), [0]) == pytest.approx(math.log(21))
        assert L.cross_entropy(np.array([0.5, 0.5]), [1]) == pytest.approx(math.log(2))
        assert L.cross_entropy(np.array([1.0, 0.0]), [0]) == 0.0
        assert L.cross_entropy(np.array([1.0, 0.0]), [1]) == pytest.approx(-math.log(1e-12))


class TestConfigAndLabels:
    def test_shape_chain(self):
        s = CFG.shapes()
        assert s["conv1"] == (21, 32, 24)
        assert s["conv2"] == (21, 15, 11)
        assert s["subsample"] == (21, 7, 5)
        assert s["sconv"] == (21, 5, 3)

    def test_bad_geometry(self):
        with pytest.raises(StructuralError):
            ScnnConfig(gamma_h=0.1)
        with pytest.raises(StructuralError):
            ScnnConfig(input_shape=(3, 5, 5))

    def test_config_json(self):
        cfg = ScnnConfig(gamma_h=0.6, seed=3)
        assert ScnnConfig.from_json(cfg.to_json()) == cfg

    def test_digit_labels(self):
        assert DigitLabel.of(0).category == 1
        assert DigitLabel.of(9, True).category == 20
        assert DigitLabel.of(None).is_blank
        assert str(DigitLabel(15)) == "4."
        with pytest.raises(StructuralError):
            DigitLabel(22)


class TestForward:
    def test_probabilities(self):
        params = init_params(CFG, 0)
        probs, _ = scnn_forward(images(3), params, CFG)
        assert probs.shape == (3, 21)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        single, _ = scnn_forward(images(1)[0], params, CFG)
        assert single.shape == (21,)

    def test_zero_params_are_uniform(self):
        params = ScnnParams({k: np.zeros(v) for k, v in param_shapes(CFG).items()})
        probs, _ = scnn_forward(images(1)[0], params, CFG)
        np.testing.assert_allclose(probs, 1 / 21, atol=1e-15)
        assert cross_entropy_loss(probs, 7) == pytest.approx(math.log(21))

    def test_deterministic(self):
        a = scnn_forward(images(2), init_params(CFG, 4), CFG)[0]
        b = scnn_forward(images(2), init_params(CFG, 4), CFG)[0]
        assert np.array_equal(a, b)

    def test_wrong_shape(self):
        with pytest.raises(StructuralError):
            scnn_forward(np.zeros((3, 64, 50)), init_params(CFG, 0), CFG)

    def test_tie_goes_to_lowest_category(self):
        params = ScnnParams({k: np.zeros(v) for k, v in param_shapes(CFG).items()})
        assert predict_digit(images(1)[0], params, CFG) == DigitLabel(1)

    def test_ablated_network(self):
        cfg = ScnnConfig(subsample_path=False)
        params = init_params(cfg, 0)
        assert "sconv_w" not in params.names()
        probs, cache = scnn_forward(images(2), params, cfg)
        g = scnn_backward(cache, [1, 2])
        assert set(g.params) == set(params.names())
        assert not g.d_a2_sconv.any()


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        params = init_params(CFG, 0)
        _, cache = scnn_forward(images(2), params, CFG)
        g = backward_from_logits(cache, np.zeros((2, 21)))
        assert all(not v.any() for v in g.params.values())

    def test_path_additivity(self):
        params = init_params(CFG, 1)
        _, cache = scnn_forward(images(2), params, CFG)
        full = scnn_backward(cache, [3, 21])
        fc = scnn_backward(cache, [3, 21], paths=("fc",))
        sc = scnn_backward(cache, [3, 21], paths=("sconv",))
        assert np.abs(full.d_a2 - fc.d_a2 - sc.d_a2).max() <= 1e-12
        assert np.array_equal(fc.d_a2, full.d_a2_fc)
        assert not sc.d_a2[..., :8, :].any() and not sc.d_a2[..., :, :6].any()

    def test_stale_cache(self):
        params = init_params(CFG, 0)
        _, cache = scnn_forward(images(1), params, CFG)
        g = scnn_backward(cache, [1])
        params.sgd_step(g.params, 0.01)
        with pytest.raises(StructuralError):
            scnn_backward(cache, [1])

    def test_label_count_mismatch(self):
        _, cache = scnn_forward(images(2), init_params(CFG, 0), CFG)
        with pytest.raises(StructuralError):
            scnn_backward(cache, [1])

    def test_gradient_check_small(self):
        r = gradient_check(seed=3, n_samples=25, batch=1)
        assert r.max_relative_error < 1e-4
        assert r.samples["ln1_g"] == 21 and r.samples["conv1_w"] == 25
        assert r.additivity_error <= 1e-12 and r.outside_sconv_max == 0.0 and r.mask_fc_exact


def digits(categories, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([render_digit(DigitLabel(int(c)), noise_seed=int(rng.integers(2**31))).pixels
                     for c in categories])


class TestTraining:
    def test_memorizes_ten_images(self):
        cats = list(range(1, 11))
        x = digits(cats)
        res = train(x, cats, ScnnConfig(batch_size=10), epochs=150, stop_at=None)
        assert evaluate(res.params, CFG, x, cats).accuracy == 1.0

    def test_loss_decreases_and_is_reproducible(self):
        cats = np.tile(np.arange(1, 22), 3)
        x = digits(cats, seed=1)
        a = train(x, cats, CFG, epochs=5)
        b = train(x, cats, CFG, epochs=5)
        assert a.history[-1].loss < a.history[0].loss
        assert a.params.equals(b.params)

    def test_empty_corpus(self):
        with pytest.raises(StructuralError):
            train(np.zeros((0,) + CFG.input_shape), [], CFG)

    def test_checkpoint_round_trip(self, tmp_path):
        cfg = ScnnConfig(seed=5, gamma_w=0.6)
        params = init_params(cfg)
        save_params(tmp_path / "m.npz", params, cfg)
        back, cfg2 = load_params(tmp_path / "m.npz")
        assert cfg2 == cfg and back.equals(params)
        x = images(2)
        assert np.array_equal(scnn_forward(x, back, cfg2)[0], scnn_forward(x, params, cfg)[0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_probabilities_form_a_distribution(seed):
    rng = np.random.default_rng(seed)
    probs, _ = scnn_forward(rng.uniform(0, 1, (2,) + CFG.input_shape), init_params(CFG, seed), CFG)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
