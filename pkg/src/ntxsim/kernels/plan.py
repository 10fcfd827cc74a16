"""Builder for single-tile schedules whose tensors all fit in the TCDM.

Inputs are staged from DRAM by head transfers (with the core zeroing any
padding ring), commands run in barrier-separated groups spread over the 8 NTX,
and outputs are written back by tail transfers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cluster import NUM_NTX, Cluster, DmaDescriptor, PadRegion, Phase, TileSchedule, run_tile_schedule
from ..ntx import AguConfig, HwlConfig, NtxCommand, Opcode
from ..tcdm import WORD


class SizingError(ValueError):
    """Working set does not fit in the TCDM."""


def loop_command(op: Opcode, bounds, streams, init_level: int, store_level: int | None = None,
                 init_value: float = 0.0) -> NtxCommand:
    """Command over ``bounds`` (innermost first) from per-stream ``(base, strides)``.

    ``streams`` holds one (base, strides) pair per AGU; ``None`` leaves that
    AGU idle at address 0.
    """
    bounds = tuple(int(n) for n in bounds)
    store_level = init_level if store_level is None else store_level
    hwl = HwlConfig(bounds, len(bounds) - 1, init_level, store_level)
    agus = [AguConfig() if st is None else AguConfig.from_strides(st[0], st[1], bounds) for st in streams]
    return NtxCommand(op, hwl, tuple(agus), init_value)


@dataclass
class Lowered:
    """A schedule plus its DRAM image: input arrays and output locations."""

    schedule: TileSchedule
    dram_bytes: int
    inputs: list  # (dram address, array)
    outputs: list  # (dram address, shape)
    tcdm_bytes: int = 128 * 1024

    def run(self, timing: bool = False, trace_events: bool = False):
        """Execute on a fresh cluster; returns (output arrays, trace)."""
        cl = Cluster(dram_bytes=-(-self.dram_bytes // 128) * 128 + 128, tcdm_bytes=self.tcdm_bytes)
        for addr, array in self.inputs:
            cl.dram.load(addr, array)
        trace = run_tile_schedule(self.schedule, cl, timing=timing, trace_events=trace_events)
        outs = [cl.dram.dump(addr, int(np.prod(shape))).reshape(shape) for addr, shape in self.outputs]
        return outs, trace


@dataclass
class TcdmTensor:
    """A (C, H, W) float32 tensor in TCDM, possibly with a zero ring of ``pad`` cells."""

    base: int
    shape: tuple
    pad: tuple = (0, 0, 0, 0)  # top, bottom, left, right

    @property
    def rows(self) -> int:
        return self.shape[1] + self.pad[0] + self.pad[1]

    @property
    def cols(self) -> int:
        return self.shape[2] + self.pad[2] + self.pad[3]

    @property
    def row_stride(self) -> int:
        return self.cols * WORD

    @property
    def plane_stride(self) -> int:
        return self.rows * self.row_stride

    @property
    def nbytes(self) -> int:
        return self.shape[0] * self.plane_stride

    def addr(self, c: int = 0, y: int = 0, x: int = 0) -> int:
        """Byte address of element (c, y, x) in padded coordinates."""
        return self.base + c * self.plane_stride + y * self.row_stride + x * WORD

    def interior(self, c: int = 0, y: int = 0, x: int = 0) -> int:
        """Byte address of element (c, y, x) in unpadded coordinates."""
        return self.addr(c, y + self.pad[0], x + self.pad[2])


def as_chw(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        return (1, 1, shape[0])
    if len(shape) == 2:
        return (1,) + shape
    if len(shape) == 3:
        return shape
    if len(shape) == 4:
        return (shape[0] * shape[1], shape[2], shape[3])
    raise ValueError(f"unsupported tensor rank {len(shape)}")


@dataclass
class ResidentPlan:
    tcdm_bytes: int = 128 * 1024
    _tcdm_top: int = 0
    _dram_top: int = 0
    _inputs: list = field(default_factory=list)
    _outputs: list = field(default_factory=list)
    _groups: list = field(default_factory=lambda: [[]])
    _pads: list = field(default_factory=list)

    def _alloc(self, nbytes: int) -> int:
        base = self._tcdm_top
        self._tcdm_top += -(-nbytes // WORD) * WORD
        if self._tcdm_top > self.tcdm_bytes:
            raise SizingError(
                f"working set {self._tcdm_top} B exceeds TCDM of {self.tcdm_bytes} B; split the layer into tiles"
            )
        return base

    def tensor(self, shape, pad=(0, 0, 0, 0), zero=False) -> TcdmTensor:
        """TCDM-only buffer; ``zero`` clears it (and any ring) before the first group."""
        t = TcdmTensor(0, as_chw(shape), tuple(pad))
        t.base = self._alloc(t.nbytes)
        if zero:
            for c in range(t.shape[0]):
                self._pads.append(PadRegion(t.addr(c), t.rows, t.cols, t.row_stride, t.rows, 0, 0, 0))
        elif any(pad):
            self._ring(t)
        return t

    def _ring(self, t: TcdmTensor) -> None:
        top, bottom, left, right = t.pad
        for c in range(t.shape[0]):
            self._pads.append(PadRegion(t.addr(c), t.rows, t.cols, t.row_stride, top, bottom, left, right))

    def input(self, array, pad=(0, 0, 0, 0)) -> TcdmTensor:
        """Tensor loaded from DRAM; ``pad`` adds a zero ring written by the core."""
        array = np.asarray(array, np.float32)
        t = self.tensor(array.shape, pad)
        dram = self._dram_top
        self._dram_top += array.size * WORD
        self._inputs.append((t, dram, array.reshape(t.shape)))
        return t

    def output(self, t: TcdmTensor, crop=None) -> int:
        """Register ``t`` (optionally a (y0, x0, h, w) interior crop) for write-back."""
        c, h, w = t.shape
        crop = crop or (0, 0, h, w)
        dram = self._dram_top
        self._dram_top += c * crop[2] * crop[3] * WORD
        self._outputs.append((t, dram, crop))
        return len(self._outputs) - 1

    def command(self, cmd: NtxCommand) -> None:
        self._groups[-1].append(cmd)

    def barrier(self) -> None:
        if self._groups[-1]:
            self._groups.append([])

    def build(self) -> Lowered:
        phases = []
        for group in self._groups:
            for lo in range(0, len(group), NUM_NTX):
                chunk = group[lo: lo + NUM_NTX]
                phases.append(Phase(commands=list(enumerate(chunk))))
        if not phases:
            phases.append(Phase())
        first, last = phases[0], phases[-1]
        for t, dram, _ in self._inputs:
            c, h, w = t.shape
            for ch in range(c):
                first.head.append(DmaDescriptor(dram + ch * h * w * WORD, w * WORD, t.interior(ch), t.row_stride,
                                                w * WORD, h, "in"))
        first.head_pads = list(self._pads)
        outputs = []
        for t, dram, (y0, x0, h, w) in self._outputs:
            for ch in range(t.shape[0]):
                last.tail.append(DmaDescriptor(t.interior(ch, y0, x0), t.row_stride, dram + ch * h * w * WORD,
                                               w * WORD, w * WORD, h, "out"))
            outputs.append((dram, (t.shape[0], h, w)))
        inputs = [(dram, array) for _, dram, array in self._inputs]
        return Lowered(TileSchedule(phases), max(self._dram_top, WORD), inputs, outputs, self.tcdm_bytes)

    def run(self, timing: bool = False):
        """Execute on a fresh cluster; returns (outputs, trace)."""
        return self.build().run(timing)
