from fractions import Fraction

import numpy as np
import pytest

from ntxsim.verify import SUITES, accumulator_suite, decomposition_suite, round_to_f32, run_suites


class TestRounding:
    def test_tie_to_even(self):
        one = Fraction(1)
        ulp = Fraction(1, 2 ** 23)
        assert round_to_f32(one + ulp / 2) == np.float32(1)
        assert round_to_f32(one + 3 * ulp / 2) == np.float32(1 + 2 * float(ulp))

    def test_subnormal_and_overflow(self):
        assert round_to_f32(Fraction(2) ** -149) == np.float32(2.0 ** -149)
        assert round_to_f32(Fraction(2) ** -151) == 0
        assert round_to_f32(Fraction(2) ** 200) == np.inf


class TestSuites:
    def test_decomposition_covers_grid(self, rng):
        r = decomposition_suite(rng)
        assert r.total == 20 and r.ok

    def test_accumulator(self, rng):
        assert accumulator_suite(rng, 30).ok

    def test_fault_is_caught(self, rng):
        r = accumulator_suite(rng, 5, fault=True)
        assert not r.ok and r.failures

    def test_unknown_fault(self):
        with pytest.raises(ValueError):
            run_suites(0, 5, fault="nope")

    def test_names(self):
        assert [r.name for r in run_suites(3, 6)] == list(SUITES)
