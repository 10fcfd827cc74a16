import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntxsim.ntx import (DRAIN_CYCLES, AguConfig, BackPressure, ConfigError, HwlConfig, Ntx, NtxCommand, Opcode,
                        StagingArea, broadcast, closed_form_stream, command_cycles, convert_strides,
                        execute_command, generate_address_stream)
from ntxsim.tcdm import AddressFault, Tcdm


@pytest.fixture
def mem():
    return Tcdm(4096)


def vector_cmd(op, n, a=0, b=256, out=512, init=0.0, reduce=True):
    hwl = HwlConfig.make((n,)) if reduce else HwlConfig.make((n,), init_level=0)
    agus = (AguConfig(a, (4,)), AguConfig(b, (4,)), AguConfig(out, (4,) if not reduce else (0,)))
    return NtxCommand(op, hwl, agus, init)


class TestStrides:
    def test_single_loop(self):
        assert convert_strides((1,), (7,)) == (1,)

    def test_constant_address(self):
        assert convert_strides((0, 0), (3, 3)) == (0, 0)

    def test_two_level_enumeration(self):
        p = convert_strides((1, 8), (3, 3))
        assert p == (1, 6)
        hwl = HwlConfig.make((3, 3))
        addr = generate_address_stream(AguConfig(0, p), hwl)
        assert addr.tolist() == [0, 1, 2, 8, 9, 10, 16, 17, 18]

    def test_contiguous_walk(self):
        hwl = HwlConfig.make((4,))
        assert generate_address_stream(AguConfig(100, (1,)), hwl).tolist() == [100, 101, 102, 103]

    def test_two_by_two(self):
        p = convert_strides((1, 4), (2, 2))
        assert p == (1, 3)  # the step undoes the inner excursion
        addr = generate_address_stream(AguConfig(100, p), HwlConfig.make((2, 2)))
        assert addr.tolist() == [100, 101, 104, 105]

    def test_negative_address_faults(self, mem):
        hwl = HwlConfig.make((2, 2))
        agu = AguConfig.from_strides(0, (4, -8), (2, 2))
        with pytest.raises(AddressFault):
            generate_address_stream(agu, hwl, check=mem)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            convert_strides((1, 2), (3,))

    @given(st.lists(st.tuples(st.integers(-64, 64), st.integers(1, 4)), min_size=1, max_size=5),
           st.integers(0, 1000))
    def test_stepped_equals_closed_form(self, levels, base):
        strides, bounds = zip(*levels)
        hwl = HwlConfig.make(bounds)
        stepped = generate_address_stream(AguConfig.from_strides(base, strides, bounds), hwl)
        assert np.array_equal(stepped, closed_form_stream(base, strides, hwl))


class TestHwl:
    def test_init_may_sit_one_above_outer(self):
        HwlConfig((3, 3), outer_level=1, init_level=2, store_level=2)

    @pytest.mark.parametrize("outer,init,store", [(1, 3, 0), (0, 0, 1), (5, 0, 0)])
    def test_invalid_levels(self, outer, init, store):
        with pytest.raises(ConfigError):
            HwlConfig((2, 2), outer, init, store)

    def test_bound_limits(self):
        with pytest.raises(ConfigError):
            HwlConfig((0,))
        with pytest.raises(ConfigError):
            HwlConfig((1,) * 6)


class TestExecute:
    def test_dot_product(self, mem):
        mem.load(0, np.array([1, 2, 3], np.float32))
        mem.load(256, np.array([4, 5, 6], np.float32))
        res = execute_command(vector_cmd(Opcode.MAC, 3), mem)
        assert mem.dump(512, 1)[0] == 32.0
        assert res.cycles == 3 + DRAIN_CYCLES
        assert res.writes == 1

    def test_max_and_first_argmax(self, mem):
        mem.load(0, np.array([-1, 7, 3, 7, 2], np.float32))
        execute_command(vector_cmd(Opcode.MAX, 5, init=-np.inf), mem)
        assert mem.dump(512, 1)[0] == 7
        execute_command(vector_cmd(Opcode.ARGMAX, 5, init=-np.inf), mem)
        assert mem.dump(512, 1)[0] == 1

    def test_relu_is_max_with_threshold(self, mem):
        x = np.array([-2, -0.5, 0, 0.5, 3], np.float32)
        mem.load(0, x)
        execute_command(vector_cmd(Opcode.RELU, 5, init=0.25, reduce=False), mem)
        y = mem.dump(512, 5)
        assert np.array_equal(y, np.maximum(x, np.float32(0.25)))
        mem.load(0, y)
        execute_command(vector_cmd(Opcode.RELU, 5, init=0.25, reduce=False), mem)
        assert np.array_equal(mem.dump(512, 5), y)

    def test_memset_and_copy(self, mem):
        execute_command(vector_cmd(Opcode.MEMSET, 4, init=2.5, reduce=False), mem)
        assert np.all(mem.dump(512, 4) == 2.5)
        mem.load(0, np.arange(4, dtype=np.float32))
        execute_command(vector_cmd(Opcode.COPY, 4, reduce=False), mem)
        assert np.array_equal(mem.dump(512, 4), np.arange(4))

    def test_conv_window_busy_cycles(self):
        cmd = NtxCommand(Opcode.MAC, HwlConfig.make((7, 7, 3)))
        assert command_cycles(cmd) == 147 + DRAIN_CYCLES

    def test_in_place_matches_sequential(self, mem, rng):
        x = rng.standard_normal(16).astype(np.float32)
        mem.load(0, x)
        cmd = vector_cmd(Opcode.VADD, 16, a=0, b=0, out=0, reduce=False)
        execute_command(cmd, mem)
        assert np.array_equal(mem.dump(0, 16), x + x)

    @given(st.lists(st.floats(-1e3, 1e3, width=32), min_size=1, max_size=30))
    def test_vectorised_equals_sequential(self, xs):
        m1, m2 = Tcdm(4096), Tcdm(4096)
        x = np.array(xs, np.float32)
        for m in (m1, m2):
            m.load(0, x)
            m.load(256, x[::-1].copy())
        cmd = vector_cmd(Opcode.MAC, len(xs))
        execute_command(cmd, m1, sequential=False)
        execute_command(cmd, m2, sequential=True)
        assert np.array_equal(m1.dump(512, 1), m2.dump(512, 1))


class TestStaging:
    def test_shadow_isolates_running_command(self, mem):
        mem.load(0, np.ones(8, np.float32))
        mem.load(256, np.ones(8, np.float32))
        st_ = StagingArea()
        st_.load(vector_cmd(Opcode.MAC, 8))
        st_.issue()
        st_.write("hwl", HwlConfig.make((2,)))
        assert st_.shadow.hwl.bounds[0] == 8
        res = execute_command(st_.shadow, mem)
        assert mem.dump(512, 1)[0] == 8
        assert res.cycles == 8 + DRAIN_CYCLES

    def test_second_issue_waits(self):
        st_ = StagingArea()
        first = st_.issue()
        second = st_.issue()
        assert st_.shadow == first and st_.pending == second
        with pytest.raises(BackPressure):
            st_.issue()
        st_.complete()
        assert st_.shadow == second and st_.busy

    def test_broadcast(self):
        areas = [StagingArea() for _ in range(8)]
        broadcast(areas, "init_value", 3.0)
        assert all(a.live.init_value == 3.0 for a in areas)

    def test_unknown_register(self):
        with pytest.raises(ConfigError):
            StagingArea().write("bogus", 1)

    def test_ntx_offload_counts(self, mem):
        ntx = Ntx(mem)
        ntx.offload(vector_cmd(Opcode.MEMSET, 4, init=1.0, reduce=False))
        assert ntx.commands == 1 and ntx.busy_cycles == 4 + DRAIN_CYCLES

    @given(st.lists(st.integers(1, 16), min_size=1, max_size=4))
    def test_live_writes_never_leak(self, bounds_seq):
        mem = Tcdm(4096)
        mem.load(0, np.arange(16, dtype=np.float32))
        mem.load(256, np.ones(16, np.float32))
        cmd = vector_cmd(Opcode.MAC, 16)
        ref = Tcdm(4096)
        ref.load(0, np.arange(16, dtype=np.float32))
        ref.load(256, np.ones(16, np.float32))
        execute_command(cmd, ref)
        st_ = StagingArea()
        st_.load(cmd)
        st_.issue()
        for n in bounds_seq:
            st_.write("hwl", HwlConfig.make((n,)))
        execute_command(st_.shadow, mem)
        assert mem.dump(512, 1)[0] == ref.dump(512, 1)[0]
