import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ntxsim.kernels import oracle
from ntxsim.kernels.linear import linear_backward, linear_forward
from ntxsim.kernels.nonlinear import maxpool_backward, maxpool_forward, relu_backward, relu_forward
from ntxsim.kernels.softmax import softmax


class TestMaxPool:
    def test_two_by_two(self):
        x = np.array([[[1, 2], [3, 4]]], np.float32)
        y, idx = maxpool_forward(x, 2, 2)
        assert y.item() == 4 and np.unravel_index(idx.item(), (2, 2)) == (1, 1)
        dx = maxpool_backward(np.array([[[5]]], np.float32), idx, x.shape, 2, 2)
        assert dx.tolist() == [[[0, 0], [0, 5]]]

    def test_overlapping_windows_add(self):
        x = np.zeros((1, 3, 3), np.float32)
        x[0, 1, 1] = 9
        y, idx = maxpool_forward(x, 2, 1)
        dx = maxpool_backward(np.ones_like(y), idx, x.shape, 2, 1)
        assert dx[0, 1, 1] == 4 and dx.sum() == 4

    def test_ties_pick_first(self):
        x = np.ones((1, 4, 4), np.float32)
        _, idx = maxpool_forward(x, 2, 2)
        rows, cols = np.unravel_index(idx.ravel(), (4, 4))
        assert rows.tolist() == [0, 0, 2, 2] and cols.tolist() == [0, 2, 0, 2]

    @pytest.mark.parametrize("k,s", [(2, 2), (3, 2), (3, 1), (1, 1)])
    def test_matches_reference(self, rng, k, s):
        x = rng.integers(-3, 4, (3, 9, 8)).astype(np.float32)
        y, idx = maxpool_forward(x, k, s)
        y_ref, idx_ref = oracle.maxpool_forward_ref(x, k, s)
        assert np.array_equal(y, y_ref) and np.array_equal(idx, idx_ref)

    @given(arrays(np.int8, (2, 6, 7), elements=st.integers(-5, 5)), arrays(np.int8, (2, 3, 3), elements=st.integers(-9, 9)))
    def test_backward_conserves_sum(self, xi, dyi):
        x, dy = xi.astype(np.float32), dyi.astype(np.float32)
        _, idx = maxpool_forward(x, 2, 2)
        dx = maxpool_backward(dy, idx, x.shape, 2, 2)
        assert dx.sum() == dy.sum()


class TestRelu:
    def test_negative(self):
        assert relu_forward(np.float32([-1])).item() == 0
        assert relu_backward(np.float32([-1]), np.float32([7])).item() == 0

    def test_positive(self):
        assert relu_backward(np.float32([2]), np.float32([3])).item() == 3

    def test_zero_blocks_gradient(self):
        assert relu_backward(np.float32([0]), np.float32([3])).item() == 0

    @given(arrays(np.float32, 50, elements=st.floats(-1e6, 1e6, width=32)))
    def test_idempotent(self, x):
        y = relu_forward(x)
        assert np.array_equal(relu_forward(y), y)
        assert np.array_equal(y, np.maximum(x, 0))


class TestLinear:
    def test_matches_exact(self, rng):
        x = rng.standard_normal((3, 20)).astype(np.float32)
        w = rng.standard_normal((7, 20)).astype(np.float32)
        b = rng.standard_normal(7).astype(np.float32)
        assert np.array_equal(linear_forward(x, w, b), oracle.linear_exact(x, w, b))

    def test_backward(self, rng):
        x = rng.standard_normal((4, 6)).astype(np.float32)
        w = rng.standard_normal((5, 6)).astype(np.float32)
        dy = rng.standard_normal((4, 5)).astype(np.float32)
        dx, dw, db = linear_backward(x, w, dy)
        np.testing.assert_allclose(dx, dy.astype(np.float64) @ w, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(dw, dy.T.astype(np.float64) @ x, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(db, dy.sum(0), rtol=1e-6, atol=1e-6)


class TestSoftmax:
    def test_uniform(self):
        assert softmax([0.0, 0.0]).tolist() == [0.5, 0.5]

    def test_large_logits(self):
        p = softmax([1000.0, 0.0])
        assert np.isfinite(p).all() and p[0] == pytest.approx(1) and p[1] == pytest.approx(0, abs=1e-30)

    def test_random(self, rng):
        x = rng.standard_normal(10).astype(np.float32) * 3
        e = np.exp(x.astype(np.float64) - x.max())
        ref = e / e.sum()
        assert np.max(np.abs(softmax(x) - ref) / ref) <= 2.0 ** -18

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            softmax([np.nan, 1.0])
