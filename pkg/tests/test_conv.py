import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntxsim.kernels import oracle
from ntxsim.kernels.conv import (ConvSpec, backward_data_by_phases, choose_tiling, conv_backward_data,
                                 conv_backward_weight, conv_forward, decompose_strided_backward, lower_forward)
from ntxsim.kernels.plan import SizingError
from ntxsim.perf import offload_counts


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


class TestForward:
    def test_scalar(self):
        y, _ = conv_forward(np.full((1, 1, 1), 3, np.float32), np.full((1, 1, 1, 1), 2, np.float32))
        assert y.item() == 6.0

    def test_random_3x3x4_exact(self, rng):
        x, w = rand(rng, 4, 8, 8), rand(rng, 5, 4, 3, 3)
        y, _ = conv_forward(x, w)
        assert np.array_equal(y, oracle.conv2d_exact(x, w))

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1), (3, 2)])
    def test_stride_and_padding(self, rng, stride, pad):
        x, w = rand(rng, 3, 11, 9), rand(rng, 4, 3, 3, 3)
        y, _ = conv_forward(x, w, stride, pad)
        assert np.array_equal(y, oracle.conv2d_exact(x, w, stride, pad))

    def test_tiled_equals_untiled(self, rng):
        x, w = rand(rng, 2, 12, 10), rand(rng, 3, 2, 3, 3)
        a, _ = conv_forward(x, w, tile_rows=1)
        b, _ = conv_forward(x, w)
        assert np.array_equal(a, b)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError):
            conv_forward(rand(rng, 3, 5, 5), rand(rng, 2, 4, 3, 3))

    def test_googlenet_conv1_offloads(self):
        spec = ConvSpec(3, 229, 229, 64, 7, 7, stride=2)
        assert (spec.out_h, spec.out_w) == (112, 112)
        n = offload_counts(spec, "NTX")
        assert (n.offloads, n.cycles) == (64, 1843968)

    def test_oversized_tile_rejected(self):
        with pytest.raises(SizingError):
            choose_tiling(ConvSpec(512, 64, 256, 8, 3, 3), tcdm_bytes=1024)

    def test_one_command_per_output_channel(self, rng):
        spec = ConvSpec(2, 6, 6, 8, 3, 3)
        low = lower_forward(spec, rand(rng, 2, 6, 6), rand(rng, 8, 2, 3, 3))
        cmds = [c for ph in low.schedule.phases for c in ph.commands]
        assert len(cmds) == 8


class TestBackward:
    def test_identity_kernel_passes_gradient(self, rng):
        dy = rand(rng, 1, 4, 5)
        dx, _ = conv_backward_data(dy, np.ones((1, 1, 1, 1), np.float32))
        assert np.array_equal(dx, dy)

    def test_1d_weight_gradient(self):
        x = np.array([1, 2, 3], np.float32).reshape(1, 1, 3)
        dy = np.array([1, 0], np.float32).reshape(1, 1, 2)
        dw, _ = conv_backward_weight(x, dy, 1, 2)
        assert dw.ravel().tolist() == [1, 2]

    @pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 5), (3, 1, 4)])
    def test_exact_against_oracles(self, rng, stride, pad, k):
        x, w = rand(rng, 3, 10, 9), rand(rng, 2, 3, k, k)
        dy = rand(rng, *oracle.conv2d_f64(x, w, stride, pad).shape)
        dx, _ = conv_backward_data(dy, w, stride, pad, x.shape[1:])
        dw, _ = conv_backward_weight(x, dy, k, k, stride, pad)
        assert np.array_equal(dx, oracle.conv_backward_data_exact(dy, w, stride, pad, x.shape[1:]))
        assert np.array_equal(dw, oracle.conv_backward_weight_exact(x, dy, k, k, stride, pad))

    def test_finite_differences(self, rng):
        x, w = rand(rng, 2, 7, 7), rand(rng, 3, 2, 3, 3)
        r = rand(rng, 3, 5, 5).astype(np.float64)
        dw, _ = conv_backward_weight(x, r.astype(np.float32), 3, 3)
        dx, _ = conv_backward_data(r.astype(np.float32), w, 1, 0, (7, 7))
        h = 1e-3
        for idx in [(0, 0, 0, 0), (2, 1, 2, 1), (1, 0, 1, 2)]:
            up, dn = w.astype(np.float64), w.astype(np.float64)
            up[idx] += h
            dn[idx] -= h
            num = (np.sum(oracle.conv2d_f64(x, up) * r) - np.sum(oracle.conv2d_f64(x, dn) * r)) / (2 * h)
            assert abs(dw[idx] - num) <= 1e-3 * max(abs(num), 1)
        for idx in [(0, 3, 3), (1, 0, 6)]:
            up, dn = x.astype(np.float64), x.astype(np.float64)
            up[idx] += h
            dn[idx] -= h
            num = (np.sum(oracle.conv2d_f64(up, w) * r) - np.sum(oracle.conv2d_f64(dn, w) * r)) / (2 * h)
            assert abs(dx[idx] - num) <= 1e-3 * max(abs(num), 1)


class TestDecomposition:
    def test_stride_one_is_identity(self):
        d = decompose_strided_backward(3, 1)
        assert len(d.phases) == 1 and d.phases[0].taps == (0, 1, 2)

    def test_stride_three_kernel_three(self):
        d = decompose_strided_backward(3, 3)
        assert [p.size for p in d.phases] == [1, 1, 1]

    def test_stride_two_kernel_three(self, rng):
        d = decompose_strided_backward(3, 2)
        assert [p.size for p in d.phases] == [2, 1]
        dy, w = rand(rng, 2, 4, 4), rand(rng, 2, 1, 3, 3)
        got = backward_data_by_phases(dy, w, 2, 0, (9, 9))
        assert np.array_equal(got, oracle.conv_backward_data_exact(dy, w, 2, 0, (9, 9)))

    def test_stride_beyond_kernel_leaves_empty_phases(self):
        d = decompose_strided_backward(2, 4)
        assert [p.size for p in d.phases] == [1, 1, 0, 0]

    @pytest.mark.parametrize("u", range(1, 6))
    @pytest.mark.parametrize("s", range(1, 5))
    def test_all_small_cases_bit_equal(self, rng, u, s):
        assert decompose_strided_backward(u, s).covers_kernel()
        ho, wo = 3, 4
        in_hw = ((ho - 1) * s + u, (wo - 1) * s + u)
        dy, w = rand(rng, 2, ho, wo), rand(rng, 2, 3, u, u)
        dx, _ = conv_backward_data(dy, w, s, 0, in_hw)
        assert np.array_equal(dx, oracle.conv_backward_data_exact(dy, w, s, 0, in_hw))

    @given(st.integers(1, 9), st.integers(1, 6))
    def test_phases_partition_taps(self, u, s):
        d = decompose_strided_backward(u, s)
        assert d.covers_kernel() and len(d.phases) == s


def test_exact_beats_sequential_float32(rng):
    x = rng.standard_normal((64, 6, 6)).astype(np.float32) * np.float32(100)
    w = rng.standard_normal((4, 64, 3, 3)).astype(np.float32)
    ref = oracle.conv2d_f64(x, w)
    y, _ = conv_forward(x, w)
    seq = oracle.conv2d_f32_sequential(x, w)
    assert np.max(np.abs(y - ref) / np.abs(ref)) <= np.max(np.abs(seq - ref) / np.abs(ref))
