import numpy as np
import pytest

from xmem.errors import DimensionError
from xmem.optim import AdamConfig, AdamState, adam_step


class TestAdamStep:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        theta = np.array([1.0, -2.0, 3.0])
        state = AdamState()
        adam_step({"t": theta}, {"t": np.zeros(3)}, state, AdamConfig())
        assert np.array_equal(theta, [1.0, -2.0, 3.0])
        assert state.step == 1

    def test_first_step_bias_correction(self):
        # g=1 on the first step: m_hat = v_hat = 1, update = -lr / (1 + eps)
        theta = np.array([0.0])
        adam_step({"t": theta}, {"t": np.ones(1)}, AdamState(), AdamConfig(lr=0.1, eps=1e-8))
        assert theta[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)

    def test_five_steps_decrease_quadratic(self):
        theta = np.array([1.0])
        state = AdamState()
        cfg = AdamConfig(lr=0.1)
        values = [float(theta[0] ** 2)]
        for _ in range(5):
            adam_step({"t": theta}, {"t": 2.0 * theta}, state, cfg)
            values.append(float(theta[0] ** 2))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            adam_step({"t": np.zeros(3)}, {"t": np.zeros(4)}, AdamState(), AdamConfig())

    def test_unknown_array_rejected(self):
        with pytest.raises(KeyError):
            adam_step({"t": np.zeros(3)}, {"other": np.zeros(3)}, AdamState(), AdamConfig())

    def test_only_named_arrays_updated(self):
        a, b = np.ones(2), np.ones(2)
        adam_step({"a": a, "b": b}, {"a": np.ones(2)}, AdamState(), AdamConfig(lr=0.5))
        assert not np.array_equal(a, np.ones(2))
        assert np.array_equal(b, np.ones(2))

    def test_step_counter_shared_across_groups(self):
        state = AdamState()
        arrays = {"a": np.zeros(1), "b": np.zeros(1)}
        grads = {"a": np.ones(1), "b": np.ones(1)}
        adam_step(arrays, grads, state, AdamConfig())
        adam_step(arrays, grads, state, AdamConfig())
        assert state.step == 2

    def test_matches_reference_implementation(self):
        # independent scalar transcription of the update rule
        rng = np.random.default_rng(0)
        theta = rng.normal(size=4)
        ref = theta.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        cfg = AdamConfig(lr=0.05, beta1=0.8, beta2=0.95, eps=1e-7)
        state = AdamState()
        arrays = {"t": theta}
        for t in range(1, 6):
            g = rng.normal(size=4)
            adam_step(arrays, {"t": g.copy()}, state, cfg)
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            ref = ref - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            assert np.allclose(theta, ref, atol=1e-15)
