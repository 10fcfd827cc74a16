import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ntxsim.kernels.optim import KINDS, OptimizerState, gradient_is_finite, optimizer_step

vec = arrays(np.float32, 6, elements=st.floats(-100, 100, width=32))


@pytest.fixture
def state(rng):
    n = 8
    return OptimizerState(rng.standard_normal(n), v=rng.standard_normal(n), r=rng.random(n), m=rng.random(n),
                          s=rng.random(n), t=2, eps=0.05)


class TestSteps:
    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_gradient(self, state, kind):
        new, applied = optimizer_step(kind, state, np.zeros(8, np.float32))
        assert applied
        if kind == "momentum":
            assert np.array_equal(new.v, (np.float32(state.alpha) * state.v).astype(np.float32))
        elif kind == "sgd":
            assert np.array_equal(new.theta, state.theta)
        elif kind == "rmsprop":
            assert np.array_equal(new.theta, state.theta)

    def test_rmsprop_scalar(self):
        st_ = OptimizerState(np.float32([1.0]), r=np.float32([0.0]), rho=0.9, eps=0.1, delta=1e-6)
        new, _ = optimizer_step("rmsprop", st_, np.float32([2.0]))
        assert new.r[0] == pytest.approx(0.4, rel=2.0 ** -20)
        ref = 1 - 0.1 * 2 / np.sqrt(0.400001)
        assert abs(new.theta[0] - ref) <= 2.0 ** -18 * abs(ref)

    def test_adam_first_step_moves_by_eps(self):
        st_ = OptimizerState(np.float32([0.0, 0.0]), eps=0.01)
        new, _ = optimizer_step("adam", st_, np.float32([3.0, -0.5]))
        np.testing.assert_allclose(new.theta, [-0.01, 0.01], rtol=1e-4)
        assert new.t == 1

    def test_non_finite_gradient_skips(self, state):
        new, applied = optimizer_step("sgd", state, np.float32([np.nan] + [0] * 7))
        assert not applied and np.array_equal(new.theta, state.theta)
        assert not gradient_is_finite([np.inf])
        assert gradient_is_finite([1.0, 2.0])

    def test_unknown_kind(self, state):
        with pytest.raises(ValueError):
            optimizer_step("lbfgs", state, np.zeros(8))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            OptimizerState(np.zeros(3), v=np.zeros(4))


class TestAlgebra:
    @given(vec, vec, st.sampled_from([2.0 ** -k for k in range(1, 12)]))
    def test_momentum_without_decay_is_sgd(self, theta, g, eps):
        # Power-of-two rates keep eps*g exact, so the extra rounding of v is a no-op.
        a, _ = optimizer_step("sgd", OptimizerState(theta, eps=eps), g)
        b, _ = optimizer_step("momentum", OptimizerState(theta, v=np.zeros(6), alpha=0.0, eps=eps), g)
        assert np.array_equal(a.theta, b.theta)

    @given(vec, arrays(np.float32, 6, elements=st.sampled_from([0.0, 0.5, -1.0, 2.0, 0.25])))
    def test_rmsprop_with_steady_unit_scale_is_sgd(self, theta, g):
        # rho = 1 freezes r; r + delta = 1 exactly, so the step is eps*g/1.
        delta = 2.0 ** -10
        r = np.full(6, 1 - delta, np.float32)
        a, _ = optimizer_step("rmsprop", OptimizerState(theta, r=r, rho=1.0, delta=delta, eps=0.5), g)
        b, _ = optimizer_step("sgd", OptimizerState(theta, eps=0.5), g)
        assert np.array_equal(a.theta, b.theta)

    def test_cycles_accumulate(self, state):
        new, _ = optimizer_step("adam", state, np.ones(8, np.float32))
        assert new.cycles > state.cycles
