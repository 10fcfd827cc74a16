"""Functional model of one NTX streaming co-processor.

Five hardware loops drive three address generators. AGU0 and AGU1 feed the
two operand streams, AGU2 the result stream. The FPU applies one opcode per
innermost iteration; reductions run through the wide accumulator and are
rounded once when stored.

Loop level conventions (0 is innermost):

* ``outer_level`` is the outermost active loop; deeper levels run once.
* ``init_level = k`` re-initialises the accumulator whenever counters
  ``0..k-1`` are all zero, i.e. once every ``N_0*...*N_{k-1}`` iterations.
* ``store_level = k`` writes a result whenever counters ``0..k-1`` are all at
  their maximum.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np

from .accumulator import LSB_EXP, f32_to_fixed, round_fixed_to_f32, segment_sums
from .tcdm import WORD, AddressFault, Tcdm

NUM_LOOPS = 5
MAX_BOUND = 1 << 16
DRAIN_CYCLES = 4


class ConfigError(ValueError):
    """Invalid loop or address-generator configuration."""


class BackPressure(RuntimeError):
    """Command issued while the NTX is busy and its pending slot is full."""


class Opcode(enum.Enum):
    MAC = "mac"
    VMULT = "vmult"
    VADD = "vadd"
    OUTERP = "outerp"
    MIN = "min"
    MAX = "max"
    ARGMAX = "argmax"
    RELU = "relu"
    THRESH_MASK = "thresh_mask"
    COPY = "copy"
    MEMSET = "memset"


REDUCING = {Opcode.MAC, Opcode.MIN, Opcode.MAX, Opcode.ARGMAX}
TWO_OPERANDS = {Opcode.MAC, Opcode.VMULT, Opcode.VADD, Opcode.OUTERP, Opcode.THRESH_MASK}
NO_OPERANDS = {Opcode.MEMSET}


def _pad(values, fill) -> tuple:
    values = tuple(values)
    if len(values) > NUM_LOOPS:
        raise ConfigError(f"at most {NUM_LOOPS} loop levels, got {len(values)}")
    return values + (fill,) * (NUM_LOOPS - len(values))


@dataclass(frozen=True)
class HwlConfig:
    """Hardware loop bounds and the levels where the accumulator is set and stored."""

    bounds: tuple = (1, 1, 1, 1, 1)
    outer_level: int = 0
    init_level: int = 0
    store_level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bounds", _pad(self.bounds, 1))
        self.validate()

    def validate(self) -> None:
        for n in self.bounds:
            if int(n) != n or not 1 <= n <= MAX_BOUND:
                raise ConfigError(f"loop bound {n} outside [1, {MAX_BOUND}]")
        if not 0 <= self.outer_level < NUM_LOOPS:
            raise ConfigError(f"outer_level {self.outer_level} outside [0, {NUM_LOOPS - 1}]")
        if not 0 <= self.store_level <= self.init_level <= self.outer_level + 1:
            raise ConfigError(
                "need 0 <= store_level <= init_level <= outer_level + 1, got "
                f"{self.store_level}, {self.init_level}, {self.outer_level}"
            )

    @classmethod
    def make(cls, bounds, init_level=None, store_level=None) -> "HwlConfig":
        """Loops over ``bounds``; by default one accumulation over all of them."""
        bounds = tuple(bounds)
        outer = max(len(bounds) - 1, 0)
        init = len(bounds) if init_level is None else init_level
        store = init if store_level is None else store_level
        return cls(bounds, outer, init, store)

    @property
    def active(self) -> tuple:
        return self.bounds[: self.outer_level + 1]

    @property
    def iterations(self) -> int:
        return int(np.prod(self.active, dtype=np.int64))

    @property
    def init_period(self) -> int:
        return int(np.prod(self.bounds[: self.init_level], dtype=np.int64))

    @property
    def store_period(self) -> int:
        return int(np.prod(self.bounds[: self.store_level], dtype=np.int64))


def convert_strides(strides, bounds) -> tuple:
    """Per-level address steps that realise the given per-level strides.

    The step taken when loop ``i`` advances must undo the excursions of all
    inner loops, which have just wrapped from ``N_k - 1`` back to zero:
    ``p_i = s_i - sum_{k<i} (N_k - 1) * s_k``.
    """
    strides = tuple(int(s) for s in strides)
    bounds = tuple(int(n) for n in bounds)
    if len(strides) > NUM_LOOPS or len(bounds) > NUM_LOOPS:
        raise ConfigError(f"at most {NUM_LOOPS} loop levels")
    if len(strides) != len(bounds):
        raise ConfigError("strides and bounds must have equal length")
    if any(n < 1 for n in bounds):
        raise ConfigError("loop bounds must be >= 1")
    steps = []
    excursion = 0
    for s, n in zip(strides, bounds):
        steps.append(s - excursion)
        excursion += (n - 1) * s
    return tuple(steps)


@dataclass(frozen=True)
class AguConfig:
    """Base byte address and per-level signed byte steps."""

    base: int = 0
    steps: tuple = (0, 0, 0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "steps", _pad((int(p) for p in self.steps), 0))

    @classmethod
    def from_strides(cls, base: int, strides, bounds) -> "AguConfig":
        return cls(int(base), convert_strides(strides, bounds))


def loop_indices(hwl: HwlConfig) -> np.ndarray:
    """Index tuples (i_0..i_outer) in execution order, shape (iterations, levels)."""
    active = hwl.active
    t = np.arange(hwl.iterations, dtype=np.int64)
    cols = []
    for n in active:
        cols.append(t % n)
        t = t // n
    return np.stack(cols, axis=1)


def advancing_level(hwl: HwlConfig) -> np.ndarray:
    """Highest loop level that advances after each iteration (last entry unused)."""
    active = hwl.active
    total = hwl.iterations
    t = np.arange(1, total + 1, dtype=np.int64)
    level = np.zeros(total, dtype=np.int64)
    period = 1
    for j, n in enumerate(active[:-1]):
        period *= n
        level[t % period == 0] = j + 1
    return level


def generate_address_stream(agu: AguConfig, hwl: HwlConfig, check: Tcdm | None = None) -> np.ndarray:
    """Addresses produced by stepping: start at base, add the step of the advancing level."""
    total = hwl.iterations
    steps = np.asarray(agu.steps, dtype=np.int64)
    inc = steps[advancing_level(hwl)]
    addr = np.empty(total, dtype=np.int64)
    addr[0] = agu.base
    if total > 1:
        addr[1:] = agu.base + np.cumsum(inc[:-1])
    if check is not None:
        _check_stream(addr, hwl, check)
    return addr


def closed_form_stream(base: int, strides, hwl: HwlConfig) -> np.ndarray:
    """Reference addresses ``base + sum_k i_k * s_k`` in loop order."""
    idx = loop_indices(hwl)
    s = np.asarray(_pad(strides, 0)[: idx.shape[1]], dtype=np.int64)
    return base + idx @ s


def _check_stream(addr: np.ndarray, hwl: HwlConfig, mem: Tcdm) -> None:
    bad = (addr < 0) | (addr + WORD > mem.size) | (addr % WORD != 0)
    if bad.any():
        t = int(np.flatnonzero(bad)[0])
        index = tuple(int(v) for v in loop_indices(hwl)[t])
        raise AddressFault(f"address {int(addr[t])} out of range at loop index {index}", index)


@dataclass
class NtxCommand:
    opcode: Opcode
    hwl: HwlConfig
    agu: tuple = (AguConfig(), AguConfig(), AguConfig())
    init_value: float = 0.0

    def __post_init__(self):
        if len(self.agu) != 3:
            raise ConfigError("an NTX command uses exactly three AGUs")
        self.agu = tuple(self.agu)
        self.init_value = float(np.float32(self.init_value))


@dataclass
class CommandResult:
    cycles: int
    writes: int
    invalid: bool = False


def command_cycles(cmd: NtxCommand) -> int:
    """Busy cycles: one innermost iteration per cycle plus the pipeline drain."""
    return cmd.hwl.iterations + DRAIN_CYCLES


def _elementwise(op: Opcode, a, b, thr: np.float32) -> np.ndarray:
    with np.errstate(all="ignore"):
        if op in (Opcode.VMULT, Opcode.OUTERP):
            return (a * b).astype(np.float32)
        if op is Opcode.VADD:
            return (a + b).astype(np.float32)
        if op is Opcode.COPY:
            return a.astype(np.float32)
        if op is Opcode.MEMSET:
            return np.full(a.shape, thr, dtype=np.float32)
        if op is Opcode.RELU:
            return np.where(a > thr, a, thr).astype(np.float32)
        if op is Opcode.THRESH_MASK:
            return np.where(a > thr, b, np.float32(0.0)).astype(np.float32)
    raise ConfigError(f"{op} is not an elementwise opcode")


def execute_command(cmd: NtxCommand, mem: Tcdm, sequential: bool | None = None) -> CommandResult:
    """Run a command against memory and return its cycle count and flags.

    The vectorised path reads all operands up front. If the result stream
    could overwrite an operand before it is read, the step-by-step path is
    used instead so that semantics match the hardware order.
    """
    hwl = cmd.hwl
    op = cmd.opcode
    streams = [generate_address_stream(a, hwl, check=mem) for a in cmd.agu]
    total = hwl.iterations
    S = hwl.store_period
    store_at = np.arange(S - 1, total, S)
    waddr = streams[2][store_at]
    if sequential is None:
        sequential = _aliases(op, streams, store_at, waddr)
    if sequential:
        return _execute_sequential(cmd, mem, streams)

    a = mem.f32[streams[0] // WORD] if op not in NO_OPERANDS else np.zeros(total, np.float32)
    b = mem.f32[streams[1] // WORD] if op in TWO_OPERANDS else np.zeros(total, np.float32)
    thr = np.float32(cmd.init_value)
    invalid = False
    if op not in REDUCING:
        out = _elementwise(op, a, b, thr)[store_at]
    else:
        out, invalid = _reduce_blocks(op, a, b, thr, hwl)
    mem.f32[waddr // WORD] = out
    return CommandResult(command_cycles(cmd), int(store_at.size), invalid)


def _aliases(op, streams, store_at, waddr) -> bool:
    reads = [] if op in NO_OPERANDS else [streams[0]]
    if op in TWO_OPERANDS:
        reads.append(streams[1])
    if not reads or waddr.size == 0:
        return False
    # Last iteration at which each address is read.
    for r in reads:
        last_read = {}
        for t, adr in enumerate(r.tolist()):
            last_read[adr] = t
        for t, adr in zip(store_at.tolist(), waddr.tolist()):
            if last_read.get(adr, -1) > t:
                return True
    return False


def _reduce_blocks(op, a, b, thr, hwl):
    total = hwl.iterations
    S = hwl.store_period
    period = hwl.init_period
    nseg = total // period
    blocks_per_seg = period // S
    nblk = total // S
    invalid = False
    out = np.empty(nblk, dtype=np.float32)
    if op is Opcode.MAC:
        fin = np.isfinite(a) & np.isfinite(b)
        a_s = np.where(fin, a, 0).astype(np.float32)
        b_s = np.where(fin, b, 0).astype(np.float32)
        bad_blk = ~fin.reshape(nblk, S).all(axis=1)
        sums = segment_sums(a_s, b_s, nblk)
        base = 0 if not np.isfinite(thr) else f32_to_fixed(thr)
        thr_bad = not np.isfinite(thr)
        for s in range(nseg):
            acc = base
            poisoned = thr_bad
            for k in range(blocks_per_seg):
                j = s * blocks_per_seg + k
                acc += sums[j]
                poisoned = poisoned or bool(bad_blk[j])
                out[j] = np.float32(np.nan) if poisoned else round_fixed_to_f32(acc, LSB_EXP)
                invalid = invalid or poisoned
        return out, invalid
    vals = a.reshape(nblk, S)
    if op is Opcode.MIN:
        blk_val = vals.min(axis=1)
        blk_idx = vals.argmin(axis=1)
        better = np.less
    else:
        blk_val = vals.max(axis=1)
        blk_idx = vals.argmax(axis=1)
        better = np.greater
    for s in range(nseg):
        cur = thr
        cur_idx = 0
        for k in range(blocks_per_seg):
            j = s * blocks_per_seg + k
            if better(blk_val[j], cur):
                cur = blk_val[j]
                cur_idx = k * S + int(blk_idx[j])
            out[j] = np.float32(cur_idx) if op is Opcode.ARGMAX else cur
    return out, invalid


def _execute_sequential(cmd: NtxCommand, mem: Tcdm, streams) -> CommandResult:
    """Reference executor: one iteration at a time, hardware order."""
    hwl = cmd.hwl
    op = cmd.opcode
    thr = np.float32(cmd.init_value)
    S = hwl.store_period
    period = hwl.init_period
    acc = 0
    cur = thr
    idx = 0
    pos = 0
    poisoned = False
    writes = 0
    invalid = False
    f = mem.f32
    for t in range(hwl.iterations):
        if t % period == 0:
            pos = 0
            cur = thr
            idx = 0
            poisoned = not np.isfinite(thr)
            acc = 0 if poisoned else f32_to_fixed(thr)
        x = f[streams[0][t] // WORD] if op not in NO_OPERANDS else np.float32(0)
        y = f[streams[1][t] // WORD] if op in TWO_OPERANDS else np.float32(0)
        if op is Opcode.MAC:
            if np.isfinite(x) and np.isfinite(y):
                acc += f32_to_fixed(x) * f32_to_fixed(y) >> -LSB_EXP
            else:
                poisoned = True
            result = np.float32(np.nan) if poisoned else None
        elif op in (Opcode.MAX, Opcode.ARGMAX):
            if x > cur:
                cur, idx = x, pos
            result = np.float32(idx) if op is Opcode.ARGMAX else cur
        elif op is Opcode.MIN:
            if x < cur:
                cur = x
            result = cur
        else:
            result = _elementwise(op, np.array([x]), np.array([y]), thr)[0]
        pos += 1
        if (t + 1) % S == 0:
            if op is Opcode.MAC and not poisoned:
                result = round_fixed_to_f32(acc, LSB_EXP)
            invalid = invalid or (op is Opcode.MAC and poisoned)
            f[streams[2][t] // WORD] = result
            writes += 1
    return CommandResult(command_cycles(cmd), writes, invalid)


REGISTER_FIELDS = ("opcode", "hwl", "agu", "init_value")


@dataclass
class StagingArea:
    """Memory-mapped command registers with a shadow copy for the running command."""

    live: NtxCommand = field(default_factory=lambda: NtxCommand(Opcode.MAC, HwlConfig()))
    shadow: NtxCommand | None = None
    pending: NtxCommand | None = None
    busy: bool = False
    register_writes: int = 0

    def write(self, name: str, value) -> None:
        if name not in REGISTER_FIELDS:
            raise ConfigError(f"unknown staging register {name!r}")
        setattr(self.live, name, value)
        self.register_writes += 1

    def load(self, cmd: NtxCommand) -> None:
        """Write every register of ``cmd`` into the live area."""
        for name in REGISTER_FIELDS:
            self.write(name, copy.deepcopy(getattr(cmd, name)))

    def issue(self) -> NtxCommand:
        """Write the command register: snapshot live registers."""
        snap = copy.deepcopy(self.live)
        if not self.busy:
            self.shadow = snap
            self.busy = True
        elif self.pending is None:
            self.pending = snap
        else:
            raise BackPressure("NTX busy and pending slot occupied")
        return snap

    def complete(self) -> None:
        """Retire the running command and promote the pending one."""
        self.shadow, self.pending = self.pending, None
        self.busy = self.shadow is not None


class Ntx:
    """One co-processor: staging area plus execution against a shared TCDM."""

    def __init__(self, mem: Tcdm):
        self.mem = mem
        self.staging = StagingArea()
        self.busy_cycles = 0
        self.commands = 0
        self.invalid = False

    def run_pending(self) -> list[CommandResult]:
        """Execute queued commands to completion from their shadow copies."""
        results = []
        while self.staging.busy:
            res = execute_command(self.staging.shadow, self.mem)
            self.busy_cycles += res.cycles
            self.commands += 1
            self.invalid |= res.invalid
            results.append(res)
            self.staging.complete()
        return results

    def offload(self, cmd: NtxCommand) -> CommandResult:
        self.staging.load(cmd)
        self.staging.issue()
        return self.run_pending()[-1]


def broadcast(areas, name: str, value) -> None:
    """Write one register in every staging area, as through the broadcast address."""
    for st in areas:
        st.write(name, copy.deepcopy(value))
