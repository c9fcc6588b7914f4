"""Forward-contract tests for the tensor primitives."""

import math

import numpy as np
import pytest

from multipref import ContractError, Parameter, Tensor, backward
from multipref.tensor import (
    add,
    concat,
    dropout,
    embedding,
    exclusive_cumsum,
    gelu,
    layer_norm,
    log_softmax,
    masked_nll,
    masked_softmax,
    matmul,
    minimum,
    mul,
    relu,
    squared_error,
)


class TestMaskedSoftmax:
    def test_single_unmasked_entry(self):
        out = masked_softmax(Tensor([1.0, 1.0]), np.array([1, 0]))
        np.testing.assert_array_equal(out.data, [1.0, 0.0])

    def test_symmetry(self):
        out = masked_softmax(Tensor([0.0, 0.0]), np.array([1, 1]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-7)

    def test_hand_evaluated_exp_normalize(self):
        out = masked_softmax(Tensor([math.log(2.0), 0.0]), np.array([1, 1]))
        np.testing.assert_allclose(out.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-6)

    def test_rows_sum_to_one_and_masked_exactly_zero(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((16, 9)).astype(np.float32))
        mask = (rng.random((16, 9)) < 0.6).astype(np.float32)
        mask[:, 0] = 1.0  # keep every row non-empty
        p = masked_softmax(x, mask).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-5)
        assert (p[mask == 0] == 0.0).all()
        assert np.isfinite(p).all()

    def test_fully_masked_row_yields_zeros(self):
        p = masked_softmax(Tensor([[1.0, 2.0]]), np.array([[0, 0]])).data
        np.testing.assert_array_equal(p, [[0.0, 0.0]])


class TestLayerNorm:
    def test_mean_and_variance_before_affine(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(2.0, 3.0, size=(10, 64)).astype(np.float32))
        gamma = Tensor(np.ones(64, dtype=np.float32))
        beta = Tensor(np.zeros(64, dtype=np.float32))
        y = layer_norm(x, gamma, beta).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-3)

    def test_affine_applied(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]], dtype=np.float32))
        gamma = Tensor(np.full(4, 2.0, dtype=np.float32))
        beta = Tensor(np.full(4, 0.5, dtype=np.float32))
        base = layer_norm(x, Tensor(np.ones(4, np.float32)), Tensor(np.zeros(4, np.float32)))
        y = layer_norm(x, gamma, beta)
        np.testing.assert_allclose(y.data, base.data * 2.0 + 0.5, rtol=1e-6)

    def test_bad_affine_shape(self):
        x = Tensor(np.zeros((2, 4), np.float32))
        with pytest.raises(ContractError):
            layer_norm(x, Tensor(np.ones(3, np.float32)), Tensor(np.zeros(4, np.float32)))


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert dropout(x, 0.5, None, train=False) is x

    def test_train_mode_scales_survivors(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((1000,), dtype=np.float32))
        y = dropout(x, 0.5, rng, train=True).data
        survivors = y[y != 0]
        np.testing.assert_allclose(survivors, 2.0)
        assert 300 < survivors.size < 700

    def test_train_requires_rng(self):
        with pytest.raises(ContractError):
            dropout(Tensor([1.0]), 0.5, None, train=True)


class TestShapesAndErrors:
    def test_matmul_shape_mismatch_names_both_shapes(self):
        a = Tensor(np.zeros((2, 3), np.float32))
        b = Tensor(np.zeros((4, 2), np.float32))
        with pytest.raises(ContractError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
            matmul(a, b)

    def test_embedding_rejects_bad_ids(self):
        table = Tensor(np.zeros((5, 4), np.float32))
        with pytest.raises(ContractError):
            embedding(table, np.array([0, 5]))
        with pytest.raises(ContractError):
            embedding(table, np.array([0.5, 1.0]))

    def test_concat_last_axis(self):
        a = Tensor(np.ones((2, 3), np.float32))
        b = Tensor(np.zeros((2, 2), np.float32))
        out = concat([a, b], axis=-1)
        assert out.shape == (2, 5)

    def test_mixed_dtype_rejected(self):
        a = Tensor(np.zeros(3, np.float32))
        b = Tensor(np.zeros(3, np.float64))
        with pytest.raises(ContractError):
            add(a, b)

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((4, 8)).astype(np.float32) * 10)
        mask = np.ones((4, 8))
        for out in (
            masked_softmax(x, mask),
            log_softmax(x),
            gelu(x),
            relu(x),
            exclusive_cumsum(x),
            squared_error(x, x),
        ):
            assert np.isfinite(out.data).all()


class TestExclusiveCumsum:
    def test_last_axis(self):
        x = Tensor(np.array([[0.6, 0.4, 1.0]], dtype=np.float32))
        out = exclusive_cumsum(x, axis=-1).data
        np.testing.assert_allclose(out, [[0.0, 0.6, 1.0]], atol=1e-7)

    def test_middle_axis(self):
        x = Tensor(np.arange(12, dtype=np.float32).reshape(2, 3, 2))
        out = exclusive_cumsum(x, axis=1).data
        expected = np.zeros_like(x.data)
        expected[:, 1, :] = x.data[:, 0, :]
        expected[:, 2, :] = x.data[:, 0, :] + x.data[:, 1, :]
        np.testing.assert_allclose(out, expected)


class TestMaskedNll:
    def test_matches_log_softmax_when_unmasked(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((6, 10)).astype(np.float32)
        labels = rng.integers(0, 10, size=6)
        nll = masked_nll(Tensor(logits), np.ones_like(logits), labels).data
        ref = -log_softmax(Tensor(logits)).data[np.arange(6), labels]
        np.testing.assert_allclose(nll, ref, atol=1e-5)

    def test_masked_label_rejected(self):
        logits = Tensor(np.zeros((1, 3), np.float32))
        mask = np.array([[1, 0, 1]])
        with pytest.raises(ContractError):
            masked_nll(logits, mask, np.array([1]))


class TestBackwardContracts:
    def test_square_gradient(self):
        p = Parameter("x", np.array(3.0, dtype=np.float32))
        backward(mul(p.value, p.value))
        np.testing.assert_allclose(p.grad, 6.0)

    def test_non_scalar_loss_rejected(self):
        p = Parameter("x", np.ones(3, np.float32))
        y = mul(p.value, p.value)
        with pytest.raises(ContractError):
            backward(y)

    def test_unused_parameter_gets_exact_zero(self):
        used = Parameter("a", np.array(2.0, np.float32))
        unused = Parameter("b", np.array(5.0, np.float32))
        backward(mul(used.value, used.value))
        assert (unused.grad == 0.0).all()

    def test_gradients_accumulate_additively(self):
        p = Parameter("x", np.array(3.0, np.float32))
        backward(mul(p.value, p.value))
        once = p.grad.copy()
        backward(mul(p.value, p.value))
        np.testing.assert_allclose(p.grad, 2 * once)
        p.zero_grad()
        assert (p.grad == 0.0).all()

    def test_minimum_tie_routes_to_first(self):
        a = Parameter("a", np.array([1.0, 2.0], np.float32))
        b = Parameter("b", np.array([1.0, 1.0], np.float32))
        backward(minimum(a.value, b.value).sum())
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0])
