"""Tests for the MLP core: shapes, init, gradients, Adam."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowrl import nn
from flowrl.nn import AdamConfig, MlpSpec, ParameterBlock


def make_net(activation="mish", seed=0, input_dim=4, hidden_dim=8,
             hidden_layers=2, output_dim=3):
    spec = MlpSpec(input_dim=input_dim, hidden_dim=hidden_dim,
                   hidden_layers=hidden_layers, output_dim=output_dim,
                   activation=activation)
    return spec, nn.init_params(spec, seed)


class TestMlpSpec:
    def test_layer_shapes(self):
        spec = MlpSpec(input_dim=4, hidden_dim=8, hidden_layers=2, output_dim=3)
        assert spec.layer_shapes() == [(4, 8), (8, 8), (8, 3)]

    def test_param_count_matches_shapes(self):
        spec = MlpSpec(input_dim=4, hidden_dim=8, hidden_layers=2, output_dim=3)
        assert spec.param_count() == (4 * 8 + 8) + (8 * 8 + 8) + (8 * 3 + 3)

    @pytest.mark.parametrize("field", ["input_dim", "hidden_dim", "hidden_layers", "output_dim"])
    def test_rejects_nonpositive_dims(self, field):
        kwargs = dict(input_dim=4, hidden_dim=8, hidden_layers=2, output_dim=3)
        kwargs[field] = 0
        with pytest.raises(ValueError):
            MlpSpec(**kwargs)

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError, match="activation"):
            MlpSpec(input_dim=4, hidden_dim=8, hidden_layers=2, output_dim=3,
                    activation="relu")


class TestInit:
    def test_deterministic_per_seed(self):
        spec, p1 = make_net(seed=7)
        p2 = nn.init_params(spec, 7)
        p3 = nn.init_params(spec, 8)
        assert np.array_equal(p1.values, p2.values)
        assert not np.array_equal(p1.values, p3.values)

    def test_fan_in_bounds(self):
        spec, params = make_net(input_dim=16, hidden_dim=4)
        first_w = params.values[:16 * 4]
        assert np.all(np.abs(first_w) <= 1.0 / 4.0)

    def test_state_starts_zeroed(self):
        _, params = make_net()
        assert not params.gradients.any()
        assert not params.adam_m.any()
        assert not params.adam_v.any()
        assert params.step_count == 0


class TestParameterBlock:
    def test_copy_is_independent(self):
        _, params = make_net()
        clone = params.copy()
        clone.values += 1.0
        clone.step_count = 5
        assert not np.array_equal(clone.values, params.values)
        assert params.step_count == 0

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            ParameterBlock(values=np.zeros(4), gradients=np.zeros(3),
                           adam_m=np.zeros(4), adam_v=np.zeros(4))


class TestForward:
    def test_single_vector_matches_batch_row(self):
        spec, params = make_net()
        x = np.linspace(-1, 1, 4)
        single = nn.forward(params, spec, x)
        batch = nn.forward(params, spec, np.stack([x, x + 0.5]))
        assert single.shape == (3,)
        # BLAS may take different kernels for 1-row and 2-row matmuls
        np.testing.assert_allclose(single, batch[0], rtol=1e-13, atol=1e-14)

    def test_rejects_wrong_input_dim(self):
        spec, params = make_net()
        with pytest.raises(ValueError, match="trailing dim"):
            nn.forward(params, spec, np.zeros(5))

    @pytest.mark.parametrize("activation", nn.ACTIVATIONS)
    def test_finite_for_extreme_inputs(self, activation):
        spec, params = make_net(activation=activation)
        x = np.array([[1e3, -1e3, 700.0, -700.0]])
        assert np.all(np.isfinite(nn.forward(params, spec, x)))

    def test_cached_forward_matches_plain(self):
        spec, params = make_net()
        x = np.random.default_rng(0).standard_normal((5, 4))
        y, cache = nn.forward_cached(params, spec, x)
        np.testing.assert_array_equal(y, nn.forward(params, spec, x))
        assert len(cache) == len(spec.layer_shapes())


class TestActivations:
    def test_mish_known_values(self):
        # x * tanh(softplus(x)); at 0 this is exactly 0
        assert nn._act(np.array(0.0), "mish") == 0.0
        x = np.array(1.0)
        expected = 1.0 * np.tanh(np.log1p(np.e))
        np.testing.assert_allclose(nn._act(x, "mish"), expected, rtol=1e-15)

    def test_elu_continuity_at_zero(self):
        eps = 1e-9
        left = nn._act(np.array(-eps), "elu")
        right = nn._act(np.array(eps), "elu")
        assert abs(left - right) < 1e-8

    @pytest.mark.parametrize("activation", nn.ACTIVATIONS)
    def test_grad_matches_finite_difference(self, activation):
        # keep clear of x=0 where the elu second derivative jumps
        x = np.concatenate([np.linspace(-3, -0.1, 20), np.linspace(0.1, 3, 20)])
        h = 1e-6
        fd = (nn._act(x + h, activation) - nn._act(x - h, activation)) / (2 * h)
        np.testing.assert_allclose(nn._act_grad(x, activation), fd, atol=1e-8)


class TestBackward:
    @pytest.mark.parametrize("activation", nn.ACTIVATIONS)
    def test_param_gradients_match_finite_difference(self, activation):
        spec, params = make_net(activation=activation)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 4))
        cot = rng.standard_normal((6, 3))
        params.zero_grad()
        nn.backward(params, spec, x, cot)
        eps = 1e-6
        for i in rng.choice(params.values.shape[0], size=12, replace=False):
            orig = params.values[i]
            params.values[i] = orig + eps
            up = float(np.sum(nn.forward(params, spec, x) * cot))
            params.values[i] = orig - eps
            down = float(np.sum(nn.forward(params, spec, x) * cot))
            params.values[i] = orig
            fd = (up - down) / (2 * eps)
            np.testing.assert_allclose(params.gradients[i], fd, rtol=1e-5, atol=1e-8)

    def test_input_gradient_matches_finite_difference(self):
        spec, params = make_net()
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 4))
        cot = rng.standard_normal((2, 3))
        gx = nn.backward(params, spec, x, cot, param_grads=False)
        eps = 1e-6
        for (r, c) in [(0, 0), (0, 3), (1, 2)]:
            xp = x.copy(); xp[r, c] += eps
            xm = x.copy(); xm[r, c] -= eps
            fd = (np.sum(nn.forward(params, spec, xp) * cot)
                  - np.sum(nn.forward(params, spec, xm) * cot)) / (2 * eps)
            np.testing.assert_allclose(gx[r, c], fd, rtol=1e-5, atol=1e-8)

    def test_param_grads_false_leaves_gradients_untouched(self):
        spec, params = make_net()
        x = np.ones((2, 4))
        nn.backward(params, spec, x, np.ones((2, 3)), param_grads=False)
        assert not params.gradients.any()

    def test_gradients_accumulate_across_calls(self):
        spec, params = make_net()
        x = np.ones((1, 4))
        cot = np.ones((1, 3))
        nn.backward(params, spec, x, cot)
        once = params.gradients.copy()
        nn.backward(params, spec, x, cot)
        np.testing.assert_allclose(params.gradients, 2 * once, rtol=1e-12)

    def test_rejects_bad_cotangent_shape(self):
        spec, params = make_net()
        with pytest.raises(ValueError, match="cotangent"):
            nn.backward(params, spec, np.ones((2, 4)), np.ones((2, 2)))


class TestAdam:
    def test_single_step_matches_reference(self):
        spec, params = make_net()
        cfg = AdamConfig(learning_rate=1e-2)
        g = np.linspace(-1, 1, params.values.shape[0])
        params.gradients[:] = g
        before = params.values.copy()
        nn.adam_step(params, cfg)
        m_hat = (1 - cfg.beta1) * g / (1 - cfg.beta1)
        v_hat = (1 - cfg.beta2) * g * g / (1 - cfg.beta2)
        expected = before - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        np.testing.assert_allclose(params.values, expected, rtol=1e-12)
        assert params.step_count == 1
        assert not params.gradients.any()

    def test_minimizes_quadratic(self):
        spec = MlpSpec(input_dim=1, hidden_dim=1, hidden_layers=1, output_dim=1)
        params = nn.init_params(spec, 0)
        cfg = AdamConfig(learning_rate=5e-2)
        target = np.full_like(params.values, 0.5)
        for _ in range(500):
            params.gradients[:] = 2 * (params.values - target)
            nn.adam_step(params, cfg)
        np.testing.assert_allclose(params.values, target, atol=1e-3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdamConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            AdamConfig(beta1=1.0)
        with pytest.raises(ValueError):
            AdamConfig(epsilon=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 3), st.integers(1, 4),
       st.sampled_from(nn.ACTIVATIONS), st.integers(0, 10_000))
def test_forward_shape_property(input_dim, hidden_dim, hidden_layers, output_dim,
                                activation, seed):
    spec = MlpSpec(input_dim=input_dim, hidden_dim=hidden_dim,
                   hidden_layers=hidden_layers, output_dim=output_dim,
                   activation=activation)
    params = nn.init_params(spec, seed)
    x = np.random.default_rng(seed).standard_normal((3, input_dim))
    y = nn.forward(params, spec, x)
    assert y.shape == (3, output_dim)
    assert np.all(np.isfinite(y))
