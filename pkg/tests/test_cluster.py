import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntxsim.cluster import (CORE_DMA_PROGRAM_CYCLES, CORE_REG_WRITE_CYCLES, Arbiter, Cluster, DmaDescriptor, Phase,
                            PadRegion, TileSchedule, dma_execute, run_tile_schedule, tcdm_arbitrate, zero_pad_rows)
from ntxsim.kernels.conv import REFERENCE_TILE_ROWS, ConvSpec, lower_forward, reference_tile_spec
from ntxsim.ntx import AguConfig, HwlConfig, NtxCommand, Opcode, command_cycles
from ntxsim.tcdm import Tcdm


def dot_cmd(n, a, b, out):
    hwl = HwlConfig.make((n,))
    return NtxCommand(Opcode.MAC, hwl, (AguConfig(a, (4,)), AguConfig(b, (4,)), AguConfig(out, (0,))))


@pytest.fixture(scope="module")
def reference_trace():
    _, tr = lower_forward(reference_tile_spec(), tile_rows=REFERENCE_TILE_ROWS).run(timing=True)
    return tr


class TestArbitration:
    def test_distinct_banks(self):
        granted, stalled = tcdm_arbitrate([(0, 1, "r"), (1, 2, "r")])
        assert len(granted) == 2 and not stalled

    def test_same_bank(self):
        granted, stalled = tcdm_arbitrate([(0, 3, "r"), (1, 3, "r")])
        assert len(granted) == 1 and len(stalled) == 1

    def test_round_robin_alternates(self):
        arb = Arbiter(banks=4)
        winners = [arb.arbitrate([(0, 0, "r"), (1, 0, "r")])[0][0][0] for _ in range(4)]
        assert winners == [0, 1, 0, 1]

    def test_unit_stride_streams_never_conflict(self):
        arb = Arbiter(banks=32)
        offered = served = 0
        for t in range(1000):
            reqs = [(u, (4 * u + t) % 32, "r") for u in range(8)]
            g, _ = arb.arbitrate(reqs)
            offered += len(reqs)
            served += len(g)
        assert served / offered == 1.0

    @given(st.lists(st.tuples(st.integers(0, 25), st.integers(0, 63)), min_size=1, max_size=40, unique_by=lambda r: r[0]))
    def test_service_weakly_grows_with_banks(self, reqs):
        def served(banks):
            return len(Arbiter(banks).arbitrate([(u, a % banks, "r") for u, a in reqs])[0])
        assert served(8) <= served(16) <= served(64)


class TestDma:
    def test_single_row(self):
        r = dma_execute(DmaDescriptor(0, 96, 0, 96, 96, 1))
        assert r.bursts == [96] and r.transfer_cycles == 24

    def test_tile_rows(self):
        r = dma_execute(DmaDescriptor(0, 96, 0, 88, 88, 12))
        assert r.bursts == [88] * 12

    def test_zero_rows_rejected(self):
        with pytest.raises(ValueError):
            dma_execute(DmaDescriptor(0, 96, 0, 96, 96, 0))

    def test_moves_data(self):
        cl = Cluster(dram_bytes=4096, tcdm_bytes=4096)
        cl.dram.load(0, np.arange(24, dtype=np.float32))
        dma_execute(DmaDescriptor(0, 48, 0, 32, 32, 2), cl.tcdm, cl.dram)
        assert np.array_equal(cl.tcdm.dump(0, 16), np.r_[0:8, 12:20])

    @given(st.lists(st.tuples(st.integers(1, 32), st.integers(1, 6)), min_size=1, max_size=8))
    def test_bytes_conserved(self, shapes):
        descs = [DmaDescriptor(0, 4 * w, 0, 4 * w, 4 * w, r) for w, r in shapes]
        bursts = [b for d in descs for b in dma_execute(d).bursts]
        assert sum(bursts) == sum(d.total_bytes for d in descs)


class TestPadding:
    def test_ring_around_tile(self):
        mem = Tcdm(4096)
        n = zero_pad_rows(mem, PadRegion(0, 5, 5, 20, 1, 1, 1, 1))
        assert n == 16

    def test_no_padding(self):
        assert zero_pad_rows(Tcdm(4096), PadRegion(0, 3, 3, 12)) == 0

    def test_top_only(self):
        mem = Tcdm(4096)
        mem.load(0, np.ones(9, np.float32))
        zero_pad_rows(mem, PadRegion(0, 3, 3, 12, top=1))
        assert mem.dump(0, 9).tolist() == [0, 0, 0, 1, 1, 1, 1, 1, 1]


class TestSchedule:
    def test_serial_head_then_command(self):
        cl = Cluster()
        cl.dram.load(0, np.arange(64, dtype=np.float32))
        head = DmaDescriptor(0, 256, 0, 256, 256, 1)
        cmd = dot_cmd(16, 0, 64 + 4, 1024 + 40)  # operands and result in distinct banks
        writes = Cluster().register_writes([(0, cmd)])
        tr = run_tile_schedule(TileSchedule([Phase(head=[head], commands=[(0, cmd)])]), cl)
        expected = dma_execute(head).cycles + writes * CORE_REG_WRITE_CYCLES + command_cycles(cmd)
        assert tr.cycles == expected
        assert cl.tcdm.dump(1024 + 40, 1)[0] == np.dot(np.arange(16.0), np.arange(17.0, 33.0))

    def test_timing_never_changes_values(self, rng):
        x = rng.standard_normal((4, 10, 12)).astype(np.float32)
        w = rng.standard_normal((8, 4, 3, 3)).astype(np.float32)
        low = lower_forward(ConvSpec(4, 10, 12, 8, 3, 3), x, w, tile_rows=2)
        (y0,), _ = low.run(timing=False)
        (y1,), _ = low.run(timing=True)
        assert np.array_equal(y0, y1)

    def test_reference_tile_bursts(self, reference_trace):
        assert reference_trace.burst_fraction(32) >= 0.90
        lengths = {b for b, _, _ in reference_trace.burst_histogram()}
        assert lengths <= {72, 88, 96}

    def test_reference_tile_utilisation(self, reference_trace):
        tr = reference_trace
        assert 0 < tr.service_fraction <= 1
        assert tr.eta_c > 0.8 and tr.eta_d > 0.8
        assert tr.busy_fraction("ntx0") > 0.5

    def test_trace_csv(self, reference_trace):
        lines = reference_trace.histogram_csv().splitlines()
        assert lines[0] == "length_bytes,count,bytes_total"
        total = sum(int(r.split(",")[2]) for r in lines[1:])
        assert total == sum(reference_trace.bursts)

    def test_dma_programming_cost(self):
        cl = Cluster()
        d = DmaDescriptor(0, 64, 0, 64, 64, 1)
        tr = run_tile_schedule(TileSchedule([Phase(head=[d])]), cl)
        assert tr.busy_fraction("core") * tr.cycles == CORE_DMA_PROGRAM_CYCLES
