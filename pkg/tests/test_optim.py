"""Adam optimizer contract tests."""

import numpy as np
import pytest

from multipref import Adam, AdamState, ConfigError, Parameter


def make_param(value, grad=None):
    p = Parameter("w", np.asarray(value, dtype=np.float32))
    if grad is not None:
        p.value.grad = np.asarray(grad, dtype=np.float32)
    return p


class TestAdamStep:
    def test_zero_grad_zero_decay_leaves_parameter_unchanged(self):
        p = make_param([1.5, -2.0], grad=[0.0, 0.0])
        opt = Adam([p], AdamState(total_steps=10, weight_decay=0.0))
        before = p.data.copy()
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_hand_evaluated(self):
        # m-hat = v-hat = 1 after bias correction, so the update is
        # -lr * 1 / (1 + eps)
        p = make_param([0.0], grad=[1.0])
        state = AdamState(total_steps=100, base_lr=1e-4, weight_decay=0.0)
        opt = Adam([p], state)
        opt.step()
        expected = -1e-4 * (1.0 / (1.0 + 1e-8))
        np.testing.assert_allclose(p.data, [expected], rtol=1e-6)
        assert state.step == 1

    def test_lr_decays_to_zero_at_total_steps(self):
        state = AdamState(total_steps=4, base_lr=1e-2)
        assert state.lr_at(0) == 1e-2
        assert state.lr_at(2) == 5e-3
        assert state.lr_at(4) == 0.0
        assert state.lr_at(9) == 0.0

    def test_no_update_once_schedule_is_exhausted(self):
        p = make_param([1.0], grad=[1.0])
        state = AdamState(total_steps=1, base_lr=1e-2, weight_decay=0.01)
        opt = Adam([p], state)
        opt.step()
        after_first = p.data.copy()
        p.value.grad = np.array([1.0], dtype=np.float32)
        opt.step()  # step counter == total_steps, lr_eff == 0
        np.testing.assert_array_equal(p.data, after_first)

    def test_gradient_clipped_before_moment_update(self):
        p = make_param([0.0], grad=[100.0])
        state = AdamState(total_steps=10, base_lr=1e-3, weight_decay=0.0)
        Adam([p], state).step()
        # clipped g == 5 -> m-hat = 5, v-hat = 25, update = 5/(5+eps)
        expected = -1e-3 * 5.0 / (5.0 + 1e-8)
        np.testing.assert_allclose(p.data, [expected], rtol=1e-6)
        np.testing.assert_allclose(state.m["w"], [(1 - 0.99) * 5.0], rtol=1e-6)

    def test_decoupled_weight_decay_without_gradient(self):
        p = make_param([2.0], grad=[0.0])
        state = AdamState(total_steps=10, base_lr=1e-2, weight_decay=0.1)
        Adam([p], state).step()
        np.testing.assert_allclose(p.data, [2.0 * (1.0 - 1e-2 * 0.1)], rtol=1e-7)

    def test_zero_total_steps_is_configuration_error(self):
        with pytest.raises(ConfigError):
            AdamState(total_steps=0)

    def test_duplicate_names_rejected(self):
        a = Parameter("w", np.zeros(1, np.float32))
        b = Parameter("w", np.zeros(1, np.float32))
        with pytest.raises(ConfigError):
            Adam([a, b], AdamState(total_steps=1))


class TestDeterminism:
    def test_bitwise_identical_runs(self):
        def run():
            rng = np.random.default_rng(1234)
            p = Parameter("w", rng.standard_normal(32).astype(np.float32))
            state = AdamState(total_steps=50, base_lr=3e-4)
            opt = Adam([p], state)
            for _ in range(50):
                p.value.grad = rng.standard_normal(32).astype(np.float32)
                opt.step()
            return p.data.tobytes(), state.m["w"].tobytes(), state.v["w"].tobytes()

        assert run() == run()

    def test_moment_shapes_match_parameters(self):
        p = make_param(np.zeros((3, 4)))
        state = AdamState(total_steps=5)
        Adam([p], state)
        assert state.m["w"].shape == (3, 4)
        assert state.v["w"].shape == (3, 4)
