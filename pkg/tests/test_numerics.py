"""
Tests for the Tensor type and its differentiable operations.
"""

import threading

import numpy as np
import pytest

from src.core.numerics import (
    Tensor, backward, concat, gelu, get_default_dtype, is_grad_enabled, layer_norm,
    log_softmax_rows, no_grad, precision, softmax_rows, take_along_rows, zero_grad
)
from src.utils.error_handling import ContractError, DimensionError, NumericError


# =============================================================================
# Construction and precision
# =============================================================================

class TestPrecision:

    def test_default_is_float32(self):
        assert get_default_dtype() == np.float32
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_precision_context_restores(self):
        with precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_unsupported_dtype(self):
        with pytest.raises(ContractError):
            with precision(np.float16):
                pass

    def test_no_grad_is_thread_local(self):
        seen = []
        with no_grad():
            worker = threading.Thread(target=lambda: seen.append(is_grad_enabled()))
            worker.start()
            worker.join()
            assert not is_grad_enabled()
        assert seen == [True]
        assert is_grad_enabled()


# =============================================================================
# Forward values
# =============================================================================

class TestForward:

    def test_softmax_rows_sum_to_one(self, rng, f64):
        x = Tensor(rng.normal(0.0, 30.0, size=(6, 9)))
        s = softmax_rows(x)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(s.data >= 0)

    def test_softmax_rejects_non_finite(self):
        with pytest.raises(NumericError):
            softmax_rows(Tensor([[0.0, np.inf]]))

    def test_log_softmax_matches_log_of_softmax(self, rng, f64):
        x = Tensor(rng.normal(size=(3, 5)))
        np.testing.assert_allclose(log_softmax_rows(x).data, np.log(softmax_rows(x).data), atol=1e-12)

    def test_layer_norm_standardizes(self, rng, f64):
        x = Tensor(rng.normal(3.0, 2.0, size=(4, 16)))
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), 1e-6)
        np.testing.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.data.var(axis=1), 1.0, atol=1e-5)

    def test_layer_norm_shape_check(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_gelu_values(self, f64):
        out = gelu(Tensor([0.0, 10.0, -10.0]))
        np.testing.assert_allclose(out.data, [0.0, 10.0, 0.0], atol=1e-9)

    def test_take_along_rows(self, f64):
        scores = Tensor(np.arange(12.0).reshape(3, 4))
        index = np.array([[0, 3], [1, 1], [2, 0]])
        np.testing.assert_array_equal(take_along_rows(scores, index).data, [[0, 3], [5, 5], [10, 8]])

    def test_take_along_rows_out_of_range(self):
        with pytest.raises(ContractError):
            take_along_rows(Tensor(np.zeros((2, 2))), np.array([[0, 2], [0, 1]]))

    def test_matmul_inner_dimension(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros(4))

    def test_division_by_zero(self):
        with pytest.raises(NumericError):
            Tensor([1.0]) / Tensor([0.0])


# =============================================================================
# Backward
# =============================================================================

class TestBackward:

    def test_simple_chain(self, f64):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        loss = (x * x).sum() * 0.5
        loss.backward()
        np.testing.assert_allclose(x.grad, [1.0, -2.0, 3.0])

    def test_matmul_gradients(self, rng, f64):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        (a @ b).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))

    def test_gradients_accumulate_until_zeroed(self, f64):
        x = Tensor([2.0], requires_grad=True)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0])
        zero_grad([x])
        np.testing.assert_allclose(x.grad, [0.0])

    def test_repeated_indices_accumulate(self, f64):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x[np.array([0, 0, 2])].sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 0.0, 1.0])

    def test_shared_subexpression(self, f64):
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        (y + y * x).sum().backward()
        # d/dx (x² + x³) = 2x + 3x²
        np.testing.assert_allclose(x.grad, [6.0 + 27.0])

    def test_concat_routes_gradients(self, f64):
        a = Tensor(np.ones((2, 1)), requires_grad=True)
        b = Tensor(np.ones((2, 2)), requires_grad=True)
        (concat([a, b], axis=1) * Tensor([[1.0, 2.0, 3.0]])).sum().backward()
        np.testing.assert_allclose(a.grad, [[1.0], [1.0]])
        np.testing.assert_allclose(b.grad, [[2.0, 3.0], [2.0, 3.0]])

    def test_only_leaves_receive_grad(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        hidden = x * 2.0
        (hidden * hidden).sum().backward()
        assert hidden.grad is None
        assert x.grad is not None

    def test_backward_needs_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.is_leaf
