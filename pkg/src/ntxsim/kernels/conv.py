"""Convolution lowerings: forward, input gradient and weight gradient.

Every lowering issues one command per output slice. The command's five loops
cover the 2-D output slice and the 3-D reduction, so an NTX runs a whole
output plane (or tile of it) from a single offload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cluster import NUM_NTX, DmaDescriptor, PadRegion, Phase, TileSchedule
from ..ntx import Opcode
from ..tcdm import WORD
from .oracle import conv2d_exact, out_size
from .plan import Lowered, ResidentPlan, SizingError, loop_command

PASSES = ("forward", "backward_data", "backward_weight")
TCDM_BYTES = 128 * 1024
MIN_ROW_ELEMS = 8


@dataclass(frozen=True)
class ConvSpec:
    """Single-image convolution of a C_in x H x W input with C_out kernels of U_h x U_w."""

    c_in: int
    h: int
    w: int
    c_out: int
    uh: int
    uw: int
    stride: int = 1
    pad: int = 0
    pass_: str = "forward"

    def __post_init__(self):
        for name in ("c_in", "h", "w", "c_out", "uh", "uw", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.pad < 0:
            raise ValueError("padding must be non-negative")
        if self.pass_ not in PASSES:
            raise ValueError(f"unknown pass {self.pass_!r}; expected one of {PASSES}")
        out_size(self.h, self.uh, self.stride, self.pad)
        out_size(self.w, self.uw, self.stride, self.pad)

    @property
    def out_h(self) -> int:
        return out_size(self.h, self.uh, self.stride, self.pad)

    @property
    def out_w(self) -> int:
        return out_size(self.w, self.uw, self.stride, self.pad)

    @property
    def weight_shape(self) -> tuple:
        return (self.c_out, self.c_in, self.uh, self.uw)

    @property
    def macs(self) -> int:
        """MACs of any one pass; all three passes touch the same products."""
        return self.out_h * self.out_w * self.c_out * self.uh * self.uw * self.c_in


# ---------------------------------------------------------------- forward


@dataclass(frozen=True)
class ForwardTiling:
    tile_rows: int
    in_rows: int
    footprint: int


def forward_footprint(spec: ConvSpec, rows: int, buffers: int = 2) -> int:
    in_rows = (rows - 1) * spec.stride + spec.uh
    wp = spec.w + 2 * spec.pad
    x = spec.c_in * in_rows * wp
    y = spec.c_out * rows * spec.out_w
    return WORD * (buffers * (x + y) + spec.c_out * spec.c_in * spec.uh * spec.uw)


def choose_tiling(spec: ConvSpec, tcdm_bytes: int = TCDM_BYTES, tile_rows: int | None = None) -> ForwardTiling:
    """Tallest output tile whose double-buffered working set fits the TCDM."""
    if tile_rows is None:
        fits = [r for r in range(1, spec.out_h + 1)
                if forward_footprint(spec, r, 1 if r == spec.out_h else 2) <= tcdm_bytes]
        if not fits:
            need = forward_footprint(spec, 1)
            raise SizingError(
                f"one output row needs {need} B of TCDM (limit {tcdm_bytes} B); "
                f"split the layer into about {math.ceil(need / tcdm_bytes)} groups of input or output channels"
            )
        tile_rows = max(fits)
    elif not 1 <= tile_rows <= spec.out_h:
        raise ValueError(f"tile_rows must lie in [1, {spec.out_h}]")
    buffers = 1 if tile_rows == spec.out_h else 2
    fp = forward_footprint(spec, tile_rows, buffers)
    if fp > tcdm_bytes:
        raise SizingError(f"tile of {tile_rows} rows needs {fp} B of TCDM (limit {tcdm_bytes} B); use fewer rows")
    return ForwardTiling(tile_rows, (tile_rows - 1) * spec.stride + spec.uh, fp)


def forward_command(spec: ConvSpec, x_base: int, x_row: int, x_plane: int, w_base: int, w_ci: int,
                    y_base: int, y_row: int, rows: int):
    """One output slice: loops kx, ky, ci (reduction) then ox, oy."""
    s = spec.stride
    bounds = (spec.uw, spec.uh, spec.c_in, spec.out_w, rows)
    return loop_command(
        Opcode.MAC, bounds,
        [(x_base, (WORD, x_row, x_plane, s * WORD, s * x_row)),
         (w_base, (WORD, spec.uw * WORD, w_ci, 0, 0)),
         (y_base, (0, 0, 0, WORD, y_row))],
        init_level=3,
    )


def lower_forward(spec: ConvSpec, x=None, w=None, tile_rows: int | None = None,
                  tcdm_bytes: int = TCDM_BYTES) -> Lowered:
    """Row-tiled, double-buffered forward convolution.

    DRAM holds x as (C_in, H, W), the weights as (C_in, C_out, U_h, U_w) so
    that each input channel's kernels form one burst, and y as
    (C_out, H_out, W_out). A phase runs up to 8 output channels of one tile;
    while tile t computes, the next input tile streams into the other buffer
    and the previous output tile streams out.
    """
    til = choose_tiling(spec, tcdm_bytes, tile_rows)
    R, s, p = til.tile_rows, spec.stride, spec.pad
    ho, wo, wp = spec.out_h, spec.out_w, spec.w + 2 * p
    ntiles = -(-ho // R)
    nbuf = 1 if ntiles == 1 else 2
    x = np.zeros((spec.c_in, spec.h, spec.w), np.float32) if x is None else np.asarray(x, np.float32)
    w = np.zeros(spec.weight_shape, np.float32) if w is None else np.asarray(w, np.float32)
    if x.shape != (spec.c_in, spec.h, spec.w) or w.shape != spec.weight_shape:
        raise ValueError("array shapes do not match the convolution spec")

    # TCDM layout.
    x_row = wp * WORD
    x_plane = til.in_rows * x_row
    y_row = wo * WORD
    y_plane = R * y_row
    kern = spec.uh * spec.uw * WORD
    x_buf = [b * spec.c_in * x_plane for b in range(nbuf)]
    y0 = nbuf * spec.c_in * x_plane
    y_buf = [y0 + b * spec.c_out * y_plane for b in range(nbuf)]
    w_tcdm = y0 + nbuf * spec.c_out * y_plane
    # DRAM layout.
    x_dram = 0
    w_dram = x.size * WORD
    y_dram = w_dram + w.size * WORD
    dram_bytes = y_dram + spec.c_out * ho * wo * WORD

    def tile_rows_of(t):
        return min(R, ho - t * R)

    def load(t):
        """Input descriptors and pad regions for tile t."""
        rows = tile_rows_of(t)
        in_rows = (rows - 1) * s + spec.uh
        top = t * R * s - p  # first real input row of the tile
        lo, hi = max(top, 0), min(top + in_rows, spec.h)
        buf = x_buf[t % nbuf]
        descs, pads = [], []
        for c in range(spec.c_in):
            plane = buf + c * x_plane
            if hi > lo:
                descs.append(DmaDescriptor(x_dram + (c * spec.h + lo) * spec.w * WORD, spec.w * WORD,
                                           plane + (lo - top) * x_row + p * WORD, x_row, spec.w * WORD, hi - lo))
            ztop = max(0, min(in_rows, lo - top))
            zbot = max(0, top + in_rows - max(hi, lo))
            if ztop or zbot:
                pads.append(PadRegion(plane, in_rows, wp, x_row, ztop, min(zbot, in_rows - ztop), 0, 0))
        return descs, pads

    def store(t):
        rows = tile_rows_of(t)
        buf = y_buf[t % nbuf]
        return [DmaDescriptor(buf + co * y_plane, y_row, y_dram + (co * ho + t * R) * wo * WORD, y_row,
                              y_row, rows, "out") for co in range(spec.c_out)]

    ngroups = -(-spec.c_out // NUM_NTX)
    phases = []
    for t in range(ntiles):
        rows = tile_rows_of(t)
        for g0 in range(0, spec.c_out, NUM_NTX):
            cmds = []
            for i, co in enumerate(range(g0, min(g0 + NUM_NTX, spec.c_out))):
                cmds.append((i, forward_command(
                    spec, x_buf[t % nbuf], x_row, x_plane, w_tcdm + co * kern, spec.c_out * kern,
                    y_buf[t % nbuf] + co * y_plane, y_row, rows)))
            phases.append(Phase(commands=cmds))
        first = phases[-ngroups]
        if t + 1 < ntiles:
            descs, pads = load(t + 1)
            first.parallel.extend(descs)
            first.pads.extend(pads)
        if t > 0:
            first.parallel.extend(store(t - 1))

    head = phases[0]
    head.head.append(DmaDescriptor(w_dram, spec.c_out * kern, w_tcdm, spec.c_out * kern, spec.c_out * kern,
                                   spec.c_in))
    descs, pads = load(0)
    head.head.extend(descs)
    if p:
        for b in range(nbuf):
            for c in range(spec.c_in):
                head.head_pads.append(PadRegion(x_buf[b] + c * x_plane, til.in_rows, wp, x_row, 0, 0, p, p))
    head.head_pads.extend(pads)
    phases[-1].tail.extend(store(ntiles - 1))

    w_dram_layout = np.ascontiguousarray(np.transpose(w, (1, 0, 2, 3)))
    inputs = [(x_dram, x), (w_dram, w_dram_layout)]
    return Lowered(TileSchedule(phases), dram_bytes, inputs, [(y_dram, (spec.c_out, ho, wo))], tcdm_bytes)


# ---------------------------------------------------------- weight gradient


def lower_backward_weight(spec: ConvSpec, x, dy, tcdm_bytes: int = TCDM_BYTES) -> Lowered:
    """dw[co] as one command per output channel: loops ox, oy (reduction) then kx, ky, ci."""
    x = np.asarray(x, np.float32)
    dy = np.asarray(dy, np.float32)
    if x.shape != (spec.c_in, spec.h, spec.w) or dy.shape != (spec.c_out, spec.out_h, spec.out_w):
        raise ValueError("array shapes do not match the convolution spec")
    p, s = spec.pad, spec.stride
    plan = ResidentPlan(tcdm_bytes)
    xt = plan.input(x, (p, p, p, p))
    dyt = plan.input(dy)
    dw = plan.tensor(spec.weight_shape)
    kern = spec.uh * spec.uw * WORD
    for co in range(spec.c_out):
        plan.command(loop_command(
            Opcode.MAC, (spec.out_w, spec.out_h, spec.uw, spec.uh, spec.c_in),
            [(xt.addr(0), (s * WORD, s * xt.row_stride, WORD, xt.row_stride, xt.plane_stride)),
             (dyt.addr(co), (WORD, dyt.row_stride, 0, 0, 0)),
             (dw.addr(co * spec.c_in), (0, 0, WORD, spec.uw * WORD, kern))],
            init_level=2,
        ))
    plan.output(dw)
    return plan.build()


# ----------------------------------------------------------- input gradient


@dataclass(frozen=True)
class SubPhase:
    """Outputs ``offset + q*stride`` use kernel taps ``offset + j*stride``."""

    offset: int
    taps: tuple

    @property
    def size(self) -> int:
        return len(self.taps)


@dataclass(frozen=True)
class PhaseDecomposition:
    kernel: int
    stride: int
    phases: tuple

    def covers_kernel(self) -> bool:
        taps = sorted(t for ph in self.phases for t in ph.taps)
        return taps == list(range(self.kernel))


def decompose_strided_backward(u: int, stride: int) -> PhaseDecomposition:
    """Split a stride-``stride`` transposed convolution along one axis into dense phases.

    Output position ``q*stride + r`` receives only the taps ``r + j*stride``,
    so each residue r is an ordinary dense correlation with a sub-kernel of
    ``ceil((u - r) / stride)`` taps (possibly none).
    """
    if stride < 1 or u < 1:
        raise ValueError("kernel size and stride must be positive")
    phases = tuple(SubPhase(r, tuple(range(r, u, stride))) for r in range(stride))
    return PhaseDecomposition(u, stride, phases)


def backward_data_by_phases(dy, w, stride: int = 1, pad: int = 0, in_hw=None) -> np.ndarray:
    """Input gradient assembled from the dense phase convolutions (host reference)."""
    dy = np.asarray(dy, np.float32)
    w = np.asarray(w, np.float32)
    co, ci, uh, uw = w.shape
    ho, wo = dy.shape[1:]
    if in_hw is None:
        in_hw = ((ho - 1) * stride + uh - 2 * pad, (wo - 1) * stride + uw - 2 * pad)
    hp, wp = in_hw[0] + 2 * pad, in_hw[1] + 2 * pad
    dxp = np.zeros((ci, hp, wp), np.float32)
    for py in decompose_strided_backward(uh, stride).phases:
        qy = len(range(py.offset, hp, stride))
        for px in decompose_strided_backward(uw, stride).phases:
            qx = len(range(px.offset, wp, stride))
            if not (py.size and px.size and qy and qx):
                continue
            # out[q] = sum_j dy[q - j] * w[r + j*s]: correlate the top-left padded
            # gradient with the reversed sub-kernel.
            sub = w[:, :, list(py.taps)][:, :, :, list(px.taps)][:, :, ::-1, ::-1]
            z = np.zeros((co, qy + py.size - 1, qx + px.size - 1), np.float32)
            hh, ww = min(ho, qy), min(wo, qx)
            z[:, py.size - 1: py.size - 1 + hh, px.size - 1: px.size - 1 + ww] = dy[:, :hh, :ww]
            part = conv2d_exact(z, np.transpose(sub, (1, 0, 2, 3)), 1, 0)
            dxp[:, py.offset::stride, px.offset::stride] = part
    return dxp[:, pad: pad + in_hw[0], pad: pad + in_hw[1]]


def lower_backward_data(spec: ConvSpec, dy, w, tcdm_bytes: int = TCDM_BYTES) -> Lowered:
    """Input gradient via phase decomposition: one command per (input channel, phase).

    Loops are jx, jy, co (reduction over sub-kernel taps and output channels)
    then qx, qy over the phase's output positions. Empty phases are cleared
    with MEMSET.
    """
    dy = np.asarray(dy, np.float32)
    w = np.asarray(w, np.float32)
    if dy.shape != (spec.c_out, spec.out_h, spec.out_w) or w.shape != spec.weight_shape:
        raise ValueError("array shapes do not match the convolution spec")
    s, p = spec.stride, spec.pad
    ho, wo = spec.out_h, spec.out_w
    hp, wp = spec.h + 2 * p, spec.w + 2 * p
    dec_y = decompose_strided_backward(spec.uh, s).phases
    dec_x = decompose_strided_backward(spec.uw, s).phases
    ky_max, kx_max = dec_y[0].size, dec_x[0].size
    qy_max, qx_max = -(-hp // s), -(-wp // s)
    plan = ResidentPlan(tcdm_bytes)
    dyt = plan.input(dy, (ky_max - 1, max(0, qy_max - ho), kx_max - 1, max(0, qx_max - wo)))
    wt = plan.input(w)
    dx = plan.tensor((spec.c_in, hp, wp))
    kern = spec.uh * spec.uw * WORD
    for ci in range(spec.c_in):
        for py in dec_y:
            qy = len(range(py.offset, hp, s))
            for px in dec_x:
                qx = len(range(px.offset, wp, s))
                if not (qy and qx):
                    continue
                out = (dx.addr(ci, py.offset, px.offset), (0, 0, 0, s * WORD, s * dx.row_stride))
                if not (py.size and px.size):
                    plan.command(loop_command(Opcode.MEMSET, (qx, qy), [None, None, (out[0], out[1][3:])],
                                              init_level=0))
                    continue
                plan.command(loop_command(
                    Opcode.MAC, (px.size, py.size, spec.c_out, qx, qy),
                    [(dyt.interior(0), (-WORD, -dyt.row_stride, dyt.plane_stride, WORD, dyt.row_stride)),
                     (wt.addr(ci) + (py.offset * spec.uw + px.offset) * WORD,
                      (s * WORD, s * spec.uw * WORD, spec.c_in * kern, 0, 0)),
                     out],
                    init_level=3,
                ))
    plan.output(dx, (p, p, spec.h, spec.w))
    return plan.build()


# ---------------------------------------------------------------- front end


def lower_conv(spec: ConvSpec, *arrays, tile_rows: int | None = None, tcdm_bytes: int = TCDM_BYTES) -> Lowered:
    """Schedule for ``spec.pass_``.

    Arrays are (x, w) for forward, (dy, w) for backward_data and (x, dy) for
    backward_weight.
    """
    if spec.pass_ == "forward":
        return lower_forward(spec, *arrays, tile_rows=tile_rows, tcdm_bytes=tcdm_bytes)
    if spec.pass_ == "backward_data":
        return lower_backward_data(spec, *arrays, tcdm_bytes=tcdm_bytes)
    return lower_backward_weight(spec, *arrays, tcdm_bytes=tcdm_bytes)


def conv_forward(x, w, stride: int = 1, pad: int = 0, tile_rows: int | None = None, timing: bool = False):
    """Run a forward convolution on the simulated cluster; returns (y, trace)."""
    x = np.asarray(x, np.float32)
    w = np.asarray(w, np.float32)
    spec = ConvSpec(x.shape[0], x.shape[1], x.shape[2], w.shape[0], w.shape[2], w.shape[3], stride, pad)
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"kernel expects {w.shape[1]} input channels, input has {x.shape[0]}")
    (y,), trace = lower_forward(spec, x, w, tile_rows).run(timing)
    return y, trace


def conv_backward_data(dy, w, stride: int = 1, pad: int = 0, in_hw=None, timing: bool = False):
    dy = np.asarray(dy, np.float32)
    w = np.asarray(w, np.float32)
    co, ci, uh, uw = w.shape
    if dy.shape[0] != co:
        raise ValueError(f"gradient has {dy.shape[0]} channels, kernel has {co} outputs")
    if in_hw is None:
        in_hw = ((dy.shape[1] - 1) * stride + uh - 2 * pad, (dy.shape[2] - 1) * stride + uw - 2 * pad)
    spec = ConvSpec(ci, in_hw[0], in_hw[1], co, uh, uw, stride, pad, "backward_data")
    if (spec.out_h, spec.out_w) != dy.shape[1:]:
        raise ValueError("gradient shape does not match the input size")
    (dx,), trace = lower_backward_data(spec, dy, w).run(timing)
    return dx, trace


def conv_backward_weight(x, dy, uh: int, uw: int, stride: int = 1, pad: int = 0, timing: bool = False):
    x = np.asarray(x, np.float32)
    dy = np.asarray(dy, np.float32)
    spec = ConvSpec(x.shape[0], x.shape[1], x.shape[2], dy.shape[0], uh, uw, stride, pad, "backward_weight")
    if (spec.out_h, spec.out_w) != dy.shape[1:]:
        raise ValueError("gradient shape does not match the convolution output")
    (dw,), trace = lower_backward_weight(spec, x, dy).run(timing)
    return dw.reshape(spec.weight_shape), trace


def reference_tile_spec() -> ConvSpec:
    """3x3 layer used for burst and utilisation studies.

    64 input channels, 24-column rows and two output channels: input rows
    are 96 B, output rows 88 B and the per-channel kernel pairs 72 B.
    """
    return ConvSpec(c_in=64, h=18, w=24, c_out=2, uh=3, uw=3, stride=1, pad=0)


REFERENCE_TILE_ROWS = 8
