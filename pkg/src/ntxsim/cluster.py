"""One processing cluster: banked TCDM, 2-D DMA, controller core and 8 NTX.

Values and timing are computed separately. Each phase of a tile schedule is
first applied functionally (head DMA, NTX commands, parallel DMA, tail DMA),
which is valid because the schedule is checked for overlap between
concurrently running transfers and commands. Timing is then obtained from a
cycle-stepped model in which every unit offers TCDM requests and a per-bank
round-robin arbiter grants one request per bank per cycle.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .ntx import (
    DRAIN_CYCLES,
    NO_OPERANDS,
    TWO_OPERANDS,
    Ntx,
    NtxCommand,
    execute_command,
    generate_address_stream,
)
from .tcdm import WORD, AddressFault, Tcdm

NUM_NTX = 8
DMA_BYTES_PER_CYCLE = 4
DRAM_LATENCY = 40
CORE_REG_WRITE_CYCLES = 1
CORE_DMA_PROGRAM_CYCLES = 10

# Requester ids used by the arbiter: NTX i port p -> 3*i + p.
DMA_PORT = 3 * NUM_NTX
CORE_PORT = DMA_PORT + 1


class ScheduleError(RuntimeError):
    """Tile schedule violates a dependency or overlap rule."""


class Dram:
    """Flat float32 backing store for the cube's memory, byte addressed."""

    def __init__(self, size: int):
        self.size = size
        self.f32 = np.zeros(size // WORD, dtype=np.float32)

    def load(self, addr: int, array) -> None:
        flat = np.asarray(array, dtype=np.float32).ravel()
        self.f32[addr // WORD: addr // WORD + flat.size] = flat

    def dump(self, addr: int, count: int) -> np.ndarray:
        return self.f32[addr // WORD: addr // WORD + count].copy()


@dataclass(frozen=True)
class DmaDescriptor:
    """2-D transfer of ``rows`` rows of ``row_bytes`` each.

    ``direction`` is ``"in"`` (DRAM to TCDM) or ``"out"`` (TCDM to DRAM).
    Row strides are in bytes on each side.
    """

    src: int
    src_stride: int
    dst: int
    dst_stride: int
    row_bytes: int
    rows: int
    direction: str = "in"

    def validate(self) -> None:
        if self.rows < 1:
            raise ValueError("DMA descriptor needs at least one row")
        if self.row_bytes <= 0:
            raise ValueError("DMA row length must be positive")
        for v in (self.src, self.dst, self.src_stride, self.dst_stride, self.row_bytes):
            if v % WORD:
                raise ValueError("DMA transfers must be 4-byte aligned")
        if self.direction not in ("in", "out"):
            raise ValueError(f"unknown DMA direction {self.direction!r}")

    @property
    def total_bytes(self) -> int:
        return self.row_bytes * self.rows

    @property
    def tcdm_side(self) -> tuple[int, int]:
        return (self.dst, self.dst_stride) if self.direction == "in" else (self.src, self.src_stride)

    @property
    def dram_side(self) -> tuple[int, int]:
        return (self.src, self.src_stride) if self.direction == "in" else (self.dst, self.dst_stride)

    def tcdm_words(self) -> np.ndarray:
        base, stride = self.tcdm_side
        rows = base + stride * np.arange(self.rows)[:, None]
        return (rows + WORD * np.arange(self.row_bytes // WORD)[None, :]).ravel()

    def dram_words(self) -> np.ndarray:
        base, stride = self.dram_side
        rows = base + stride * np.arange(self.rows)[:, None]
        return (rows + WORD * np.arange(self.row_bytes // WORD)[None, :]).ravel()


@dataclass
class DmaResult:
    bursts: list
    transfer_cycles: int
    latency: int = DRAM_LATENCY

    @property
    def cycles(self) -> int:
        return self.transfer_cycles + self.latency


def dma_execute(d: DmaDescriptor, tcdm: Tcdm | None = None, dram: Dram | None = None) -> DmaResult:
    """Burst list and cycle cost of one descriptor; moves data if memories are given."""
    d.validate()
    if tcdm is not None:
        tcdm.check(d.tcdm_words())
    if dram is not None:
        dw = d.dram_words()
        if dw.min() < 0 or dw.max() + WORD > dram.size:
            raise AddressFault("DMA DRAM range out of bounds")
    if tcdm is not None and dram is not None:
        t = d.tcdm_words() // WORD
        m = d.dram_words() // WORD
        if d.direction == "in":
            tcdm.f32[t] = dram.f32[m]
        else:
            dram.f32[m] = tcdm.f32[t]
    return DmaResult([d.row_bytes] * d.rows, math.ceil(d.total_bytes / DMA_BYTES_PER_CYCLE))


@dataclass(frozen=True)
class PadRegion:
    """A 2-D plane in TCDM whose border cells are zeroed by the core."""

    base: int
    rows: int
    cols: int
    row_stride: int
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def cells(self) -> np.ndarray:
        r = np.arange(self.rows)[:, None]
        c = np.arange(self.cols)[None, :]
        ring = (r < self.top) | (r >= self.rows - self.bottom) | (c < self.left) | (c >= self.cols - self.right)
        addr = self.base + r * self.row_stride + c * WORD
        return np.broadcast_to(addr, ring.shape)[ring]


def zero_pad_rows(tcdm: Tcdm, region: PadRegion, live=()) -> int:
    """Zero the pad ring of ``region``; returns the number of cells written.

    ``live`` is a sequence of (start, stop) byte ranges that must not be
    touched.
    """
    cells = region.cells()
    if cells.size == 0:
        return 0
    for lo, hi in live:
        if ((cells >= lo) & (cells < hi)).any():
            raise ScheduleError(f"padding overlaps live buffer [{lo}, {hi})")
    tcdm.write(cells, np.zeros(cells.size, np.float32))
    return int(cells.size)


@dataclass
class Phase:
    head: list = field(default_factory=list)
    commands: list = field(default_factory=list)  # (ntx index, NtxCommand)
    parallel: list = field(default_factory=list)
    tail: list = field(default_factory=list)
    pads: list = field(default_factory=list)  # zeroed by the core alongside the commands
    head_pads: list = field(default_factory=list)  # zeroed before the commands issue


@dataclass
class TileSchedule:
    phases: list = field(default_factory=list)

    def descriptors(self):
        for ph in self.phases:
            yield from ph.head
            yield from ph.parallel
            yield from ph.tail


def _command_words(cmd: NtxCommand) -> tuple[np.ndarray, np.ndarray]:
    """(read words, written words) touched by a command."""
    streams = [generate_address_stream(a, cmd.hwl) for a in cmd.agu]
    reads = []
    if cmd.opcode not in NO_OPERANDS:
        reads.append(streams[0])
    if cmd.opcode in TWO_OPERANDS:
        reads.append(streams[1])
    S = cmd.hwl.store_period
    writes = streams[2][S - 1::S]
    r = np.unique(np.concatenate(reads) // WORD) if reads else np.zeros(0, np.int64)
    return r, np.unique(writes // WORD)


def check_schedule(ts: TileSchedule) -> None:
    """Reject schedules whose concurrent parts touch the same TCDM words.

    Within a phase no command may write a word that another command reads
    or writes, and parallel transfers and padding may not touch any word a
    command uses.
    """
    for k, ph in enumerate(ts.phases):
        if len({i for i, _ in ph.commands}) != len(ph.commands):
            raise ScheduleError(f"phase {k}: two commands on one NTX")
        for i, _ in ph.commands:
            if not 0 <= i < NUM_NTX:
                raise ScheduleError(f"phase {k}: no NTX {i}")
        sets = [_command_words(cmd) for _, cmd in ph.commands]
        for a in range(len(sets)):
            for b in range(len(sets)):
                if a != b and np.isin(sets[a][1], np.concatenate(sets[b])).any():
                    raise ScheduleError(f"phase {k}: commands {a} and {b} race on TCDM words")
        busy = np.unique(np.concatenate([np.concatenate(p) for p in sets])) if sets else np.zeros(0, np.int64)
        for d in ph.parallel:
            d.validate()
            if np.isin(d.tcdm_words() // WORD, busy).any():
                raise ScheduleError(f"phase {k}: parallel DMA overlaps a running command's operands")
        for region in ph.pads:
            if np.isin(region.cells() // WORD, busy).any():
                raise ScheduleError(f"phase {k}: padding overlaps a running command's operands")


@dataclass
class ClusterTrace:
    cycles: int = 0
    events: list = field(default_factory=list)  # (cycle, unit, state)
    busy: dict = field(default_factory=lambda: defaultdict(int))
    bursts: list = field(default_factory=list)
    offered: int = 0
    serviced: int = 0
    stalled: int = 0
    ntx_iterations: int = 0
    ntx_active_cycles: int = 0
    dma_bytes: int = 0
    dma_active_cycles: int = 0
    head_tail_bytes: int = 0

    def busy_fraction(self, unit: str) -> float:
        return self.busy.get(unit, 0) / self.cycles if self.cycles else 0.0

    @property
    def service_fraction(self) -> float:
        return self.serviced / self.offered if self.offered else 1.0

    @property
    def eta_c(self) -> float:
        """Innermost iterations per NTX-cycle while commands are in flight."""
        return self.ntx_iterations / self.ntx_active_cycles if self.ntx_active_cycles else 1.0

    @property
    def eta_d(self) -> float:
        """Achieved fraction of peak DMA bandwidth while transfers are streaming."""
        if not self.dma_active_cycles:
            return 1.0
        return self.dma_bytes / (DMA_BYTES_PER_CYCLE * self.dma_active_cycles)

    def burst_histogram(self) -> list[tuple[int, int, int]]:
        counts = Counter(self.bursts)
        return [(length, n, length * n) for length, n in sorted(counts.items())]

    def burst_fraction(self, min_bytes: int = 32) -> float:
        total = sum(self.bursts)
        big = sum(b for b in self.bursts if b >= min_bytes)
        return big / total if total else 1.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cycle", "unit", "state"])
        w.writerows(self.events)
        return buf.getvalue()

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["length_bytes", "count", "bytes_total"])
        w.writerows(self.burst_histogram())
        return buf.getvalue()


class Arbiter:
    """Per-bank round-robin: the first requester after the last winner is granted."""

    def __init__(self, banks: int = 32, ports: int = CORE_PORT + 1):
        self.banks = banks
        self.ports = ports
        self.last = [ports - 1] * banks

    def arbitrate(self, requests):
        by_bank = defaultdict(list)
        for req in requests:
            by_bank[req[1]].append(req)
        granted, stalled = [], []
        for bank, reqs in by_bank.items():
            last = self.last[bank]
            win = min(reqs, key=lambda r: (r[0] - last - 1) % self.ports)
            self.last[bank] = win[0]
            granted.append(win)
            stalled.extend(r for r in reqs if r is not win)
        return granted, stalled


def tcdm_arbitrate(requests, arbiter: Arbiter | None = None):
    """Grant one request per bank; requests are (requester, bank, kind) tuples."""
    arbiter = arbiter or Arbiter()
    return arbiter.arbitrate(list(requests))


STAGING_REGISTERS = 1 + 5 + 1 + 3 + 15 + 1  # opcode, bounds, levels, bases, steps, init


def _registers(cmd: NtxCommand) -> dict:
    regs = {"opcode": cmd.opcode, "levels": (cmd.hwl.outer_level, cmd.hwl.init_level, cmd.hwl.store_level),
            "init": cmd.init_value}
    for i, n in enumerate(cmd.hwl.bounds):
        regs[f"N{i}"] = n
    for j, a in enumerate(cmd.agu):
        regs[f"base{j}"] = a.base
        for i, p in enumerate(a.steps):
            regs[f"p{j}{i}"] = p
    return regs


class _NtxTiming:
    """Request generator for one running command."""

    def __init__(self, idx: int, cmd: NtxCommand, banks: int):
        self.idx = idx
        hwl = cmd.hwl
        streams = [generate_address_stream(a, hwl) for a in cmd.agu]
        self.reads = []
        if cmd.opcode not in NO_OPERANDS:
            self.reads.append((streams[0] // WORD) % banks)
        if cmd.opcode in TWO_OPERANDS:
            self.reads.append((streams[1] // WORD) % banks)
        S = hwl.store_period
        self.store = np.zeros(hwl.iterations, dtype=bool)
        self.store[S - 1::S] = True
        self.wbank = (streams[2] // WORD) % banks
        self.total = hwl.iterations
        self.t = 0
        self.pending = None
        self.drain = DRAIN_CYCLES

    def requests(self):
        if self.t >= self.total:
            return []
        if self.pending is None:
            t = self.t
            p = [(3 * self.idx + k, int(r[t]), "r") for k, r in enumerate(self.reads)]
            if self.store[t]:
                p.append((3 * self.idx + 2, int(self.wbank[t]), "w"))
            self.pending = p
        return self.pending

    def grant(self, granted: set) -> None:
        if self.pending is None:
            return
        self.pending = [r for r in self.pending if r not in granted]
        if not self.pending:
            self.pending = None
            self.t += 1

    @property
    def done(self) -> bool:
        return self.t >= self.total and self.drain == 0


class _DmaTiming:
    """Word-granular DMA engine: one TCDM access per 4 bytes, one latency per batch."""

    def __init__(self, descs, banks: int):
        self.banks = banks
        words = [d.tcdm_words() for d in descs]
        self.words = np.concatenate(words) // WORD % banks if words else np.zeros(0, dtype=np.int64)
        self.latency = DRAM_LATENCY if len(descs) else 0
        self.i = 0
        self.bytes = sum(d.total_bytes for d in descs)
        self.streaming = 0

    def requests(self):
        if self.latency > 0 or self.i >= self.words.size:
            return []
        return [(DMA_PORT, int(self.words[self.i]), "d")]

    def tick(self, granted: set) -> None:
        if self.latency > 0:
            self.latency -= 1
            return
        if self.i < self.words.size:
            self.streaming += 1
            if (DMA_PORT, int(self.words[self.i]), "d") in granted:
                self.i += 1

    @property
    def done(self) -> bool:
        return self.latency == 0 and self.i >= self.words.size


class Cluster:
    """Cluster state: memories, NTX units, arbiter and last-written staging registers."""

    def __init__(self, dram_bytes: int = 1 << 22, tcdm_bytes: int = 128 * 1024, banks: int = 32):
        self.tcdm = Tcdm(tcdm_bytes, banks)
        self.dram = Dram(dram_bytes)
        self.ntx = [Ntx(self.tcdm) for _ in range(NUM_NTX)]
        self.arbiter = Arbiter(banks)
        self._staged = [dict() for _ in range(NUM_NTX)]

    def register_writes(self, cmds) -> int:
        """Core register writes to stage ``cmds``; fields shared by all use the broadcast address."""
        regs = {i: _registers(c) for i, c in cmds}
        writes = 0
        keys = set().union(*(r.keys() for r in regs.values())) if regs else set()
        for key in sorted(keys):
            vals = {i: r[key] for i, r in regs.items()}
            changed = [i for i, v in vals.items() if self._staged[i].get(key, object()) != v]
            if not changed:
                continue
            if len(regs) == NUM_NTX and len(set(map(repr, vals.values()))) == 1:
                writes += 1
            else:
                writes += len(changed)
            for i in changed:
                self._staged[i][key] = vals[i]
        return writes + len(regs)  # plus one command-register write per issue


def run_functional(ts: TileSchedule, cl: Cluster) -> None:
    """Apply every phase in program order without timing."""
    for ph in ts.phases:
        for d in ph.head:
            dma_execute(d, cl.tcdm, cl.dram)
        for region in ph.head_pads + ph.pads:
            zero_pad_rows(cl.tcdm, region)
        for i, cmd in ph.commands:
            res = execute_command(cmd, cl.tcdm)
            cl.ntx[i].busy_cycles += res.cycles
            cl.ntx[i].commands += 1
        for d in ph.parallel:
            dma_execute(d, cl.tcdm, cl.dram)
        for d in ph.tail:
            dma_execute(d, cl.tcdm, cl.dram)


def run_tile_schedule(ts: TileSchedule, cl: Cluster | None = None, timing: bool = True,
                      trace_events: bool = True) -> ClusterTrace:
    """Execute a schedule; returns the cycle-level trace.

    Memory effects are those of :func:`run_functional`. With ``timing`` the
    cycle-stepped model runs each phase: the core programs head transfers,
    which complete before it stages and issues the NTX commands; it then
    programs the parallel transfers and zero padding, and after all commands
    finish it programs the tail transfers.
    """
    cl = cl or Cluster()
    check_schedule(ts)
    trace = ClusterTrace()
    for d in ts.descriptors():
        trace.bursts.extend(dma_execute(d).bursts)
    if not timing:
        run_functional(ts, cl)
        return trace

    sim = _Sim(cl, trace, trace_events)
    for ph in ts.phases:
        sim.phase(ph)
    run_functional(ts, cl)
    trace.cycles = sim.cycle
    for unit, state in sim.state.items():
        if state != "idle" and trace_events:
            trace.events.append((sim.cycle, unit, "idle"))
    return trace


class _Sim:
    def __init__(self, cl: Cluster, trace: ClusterTrace, trace_events: bool):
        self.cl = cl
        self.trace = trace
        self.cycle = 0
        self.state = {}
        self.trace_events = trace_events
        self.banks = cl.tcdm.banks

    def _set(self, unit: str, state: str) -> None:
        if self.state.get(unit, "idle") != state:
            self.state[unit] = state
            if self.trace_events:
                self.trace.events.append((self.cycle, unit, state))

    def _step(self, ntxs, dma, core_busy: bool, core_words=None) -> None:
        reqs = []
        for u in ntxs:
            reqs.extend(u.requests())
        if dma is not None:
            reqs.extend(dma.requests())
        if core_words:
            reqs.append((CORE_PORT, int(core_words[0]), "c"))
        granted, stalled = self.cl.arbiter.arbitrate(reqs)
        gset = set(granted)
        self.trace.offered += len(reqs)
        self.trace.serviced += len(granted)
        self.trace.stalled += len(stalled)
        for u in ntxs:
            if u.t < u.total:
                self.trace.ntx_active_cycles += 1
                before = u.t
                u.grant(gset)
                self.trace.ntx_iterations += u.t - before
                self.trace.busy[f"ntx{u.idx}"] += 1
                self._set(f"ntx{u.idx}", "busy")
            elif u.drain > 0:
                u.drain -= 1
                self.trace.ntx_active_cycles += 1
                self.trace.busy[f"ntx{u.idx}"] += 1
            else:
                self._set(f"ntx{u.idx}", "idle")
        if dma is not None:
            if not dma.done:
                self.trace.busy["dma"] += 1
                self._set("dma", "busy")
            dma.tick(gset)
            if dma.done:
                self._set("dma", "idle")
        if core_busy:
            self.trace.busy["core"] += 1
        if core_words and (CORE_PORT, int(core_words[0]), "c") in gset:
            core_words.pop(0)
        self.cycle += 1

    def _transfer(self, descs, ntxs, core_cycles: int, core_words=None):
        """Run DMA ``descs`` while ``ntxs`` progress; returns when the DMA is done."""
        dma = _DmaTiming(descs, self.banks)
        core_words = list(core_words or [])
        while not dma.done or core_cycles > 0 or core_words:
            busy = core_cycles > 0 or bool(core_words)
            self._set("core", "busy" if busy else "idle")
            self._step(ntxs, dma, busy, core_words if core_cycles <= 0 else None)
            core_cycles -= 1
        self.trace.dma_bytes += dma.bytes
        self.trace.dma_active_cycles += dma.streaming
        return dma

    def phase(self, ph: Phase) -> None:
        # Head transfers: program, then wait for completion.
        if ph.head:
            self._transfer(ph.head, [], CORE_DMA_PROGRAM_CYCLES * len(ph.head))
            self.trace.head_tail_bytes += sum(d.total_bytes for d in ph.head)
        if ph.head_pads:
            words = []
            for region in ph.head_pads:
                words.extend(((region.cells() // WORD) % self.banks).tolist())
            self._transfer([], [], 0, words)
        # Stage and issue commands one NTX at a time.
        ntxs = []
        writes = self.cl.register_writes(ph.commands) if ph.commands else 0
        per_cmd = writes // max(len(ph.commands), 1)
        for k, (i, cmd) in enumerate(ph.commands):
            cost = per_cmd + (writes - per_cmd * len(ph.commands) if k == 0 else 0)
            for _ in range(cost * CORE_REG_WRITE_CYCLES):
                self._set("core", "busy")
                self._step(ntxs, None, True)
            ntxs.append(_NtxTiming(i, cmd, self.banks))
        # Parallel transfers and padding overlap the computation.
        pad_words = []
        for region in ph.pads:
            pad_words.extend(((region.cells() // WORD) % self.banks).tolist())
        self._transfer(ph.parallel, ntxs, CORE_DMA_PROGRAM_CYCLES * len(ph.parallel), pad_words)
        self._set("core", "idle")
        while not all(u.done for u in ntxs):
            self._step(ntxs, None, False)
        for u in ntxs:
            self._set(f"ntx{u.idx}", "idle")
        if ph.tail:
            self._transfer(ph.tail, [], CORE_DMA_PROGRAM_CYCLES * len(ph.tail))
            self.trace.head_tail_bytes += sum(d.total_bytes for d in ph.tail)
        self._set("core", "idle")
