import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntxsim.special import KINDS, special_function

REL = 2.0 ** -20


def rel_err(got, ref):
    return np.max(np.abs(got.astype(np.float64) - ref) / np.maximum(np.abs(ref), 1e-300))


class TestValues:
    def test_div_exact_one(self):
        assert special_function("div", [1.0], [1.0]).values[0] == 1.0

    def test_sqrt_four(self):
        assert abs(special_function("sqrt", [4.0]).values[0] - 2.0) <= 2.0 * REL

    def test_exp_batch(self, rng):
        x = rng.uniform(-5, 5, 64).astype(np.float32)
        r = special_function("exp", x)
        assert rel_err(r.values, np.exp(x.astype(np.float64))) <= REL
        assert 30 <= r.cycles_per_element <= 100

    def test_log_batch(self, rng):
        x = rng.uniform(0.01, 100, 64).astype(np.float32)
        r = special_function("log", x)
        ref = np.log(x.astype(np.float64))
        assert np.max(np.abs(r.values - ref)) <= 4 * REL * np.max(np.abs(ref))

    def test_rsqrt(self, rng):
        x = rng.uniform(1e-3, 1e3, 64).astype(np.float32)
        assert rel_err(special_function("rsqrt", x).values, 1 / np.sqrt(x.astype(np.float64))) <= REL


class TestDomain:
    def test_negative_sqrt_invalid(self):
        r = special_function("sqrt", [-1.0, 4.0])
        assert np.isnan(r.values[0]) and r.invalid.tolist() == [True, False]

    def test_divide_by_zero_gives_inf(self):
        assert special_function("div", [1.0], [0.0]).values[0] == np.inf

    def test_log_zero(self):
        assert special_function("log", [0.0]).values[0] == -np.inf

    def test_exp_extremes(self):
        v = special_function("exp", [-200.0, 200.0]).values
        assert v[0] == 0 and v[1] == np.inf

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            special_function("tanh", [1.0])

    def test_div_needs_divisor(self):
        with pytest.raises(ValueError):
            special_function("div", [1.0])


@given(st.lists(st.floats(2.0 ** -20, 2.0 ** 20, width=32), min_size=1, max_size=16),
       st.lists(st.floats(2.0 ** -20, 2.0 ** 20, width=32), min_size=16, max_size=16))
def test_div_accuracy(xs, ys):
    x = np.array(xs, np.float32)
    y = np.array(ys[: len(xs)], np.float32)
    got = special_function("div", x, y).values
    assert rel_err(got, x.astype(np.float64) / y) <= REL


@given(st.lists(st.floats(2.0 ** -100, 2.0 ** 100, width=32), min_size=1, max_size=16))
def test_sqrt_accuracy(xs):
    x = np.array(xs, np.float32)
    assert rel_err(special_function("sqrt", x).values, np.sqrt(x.astype(np.float64))) <= REL


def test_kinds_listed():
    assert set(KINDS) == {"div", "sqrt", "rsqrt", "exp", "log"}
