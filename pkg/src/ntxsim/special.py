"""Division, square roots, exp and log as sequences of NTX vector commands.

There is no special-function hardware. Each routine stages its operands in a
scratch TCDM, lets the core produce seeds or exponent fields per element, and
refines on the NTX with elementwise commands. Fused updates such as
``y + y*e`` run as two-term MAC commands (inner loop of 2), so they are
rounded once.

Cycle accounting per command is ``iterations + drain + setup``; core work is
``CORE_ELEM_CYCLES`` per element per core pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ntx import DRAIN_CYCLES, AguConfig, HwlConfig, NtxCommand, Opcode, execute_command
from .tcdm import WORD, Tcdm

SETUP_CYCLES = 16
"""Staging-area writes needed to configure one vector command."""

CORE_ELEM_CYCLES = 8
"""Core cost of one per-element integer pass (load, bit ops, store, loop)."""

SEED_BITS = 8


@dataclass
class VectorUnit:
    """Bump allocator over a private TCDM plus command and core cycle counters."""

    n: int
    mem: Tcdm = None
    cycles: int = 0
    commands: int = 0
    core_passes: int = 0
    _top: int = 0

    def __post_init__(self):
        if self.mem is None:
            size = max(64 * 1024, -(-self.n * WORD * 32 // 128) * 128)
            self.mem = Tcdm(size=size)

    def alloc(self, values=None, count=None) -> int:
        """Ring allocation: operands are re-staged for every command."""
        count = self.n if count is None else count
        if self._top + WORD * count > self.mem.size:
            self._top = 0
        addr = self._top
        self._top += WORD * count
        if values is not None:
            self.mem.load(addr, np.broadcast_to(np.asarray(values, np.float32), (count,)))
        return addr

    def const(self, *values) -> int:
        return self.alloc(np.array(values, np.float32), count=len(values))

    def get(self, addr: int) -> np.ndarray:
        return self.mem.dump(addr, self.n)

    def put(self, addr: int, values) -> None:
        self.mem.load(addr, values)

    def _run(self, cmd: NtxCommand) -> None:
        execute_command(cmd, self.mem)
        self.cycles += cmd.hwl.iterations + DRAIN_CYCLES + SETUP_CYCLES
        self.commands += 1

    def binary(self, op: Opcode, a: int, b: int, out: int, b_scalar=False) -> int:
        """Elementwise op; ``b_scalar`` broadcasts the single word at ``b``."""
        hwl = HwlConfig((self.n,), 0, 0, 0)
        sb = 0 if b_scalar else WORD
        self._run(NtxCommand(op, hwl, (AguConfig(a, (WORD,)), AguConfig(b, (sb,)), AguConfig(out, (WORD,)))))
        return out

    def fused(self, terms, out: int) -> int:
        """out = sum of products over terms, one rounding per element.

        Each term is ``((addr, scalar), (addr, scalar))``; a scalar operand is
        a single broadcast word.
        """
        k = len(terms)
        hwl = HwlConfig((k, self.n), 1, 1, 1)
        aguS = []
        for side in range(2):
            bases = [t[side][0] for t in terms]
            scal = [t[side][1] for t in terms]
            # Level 0 walks the terms, level 1 walks elements. Each term may
            # live anywhere, so express the term walk as explicit steps.
            steps0 = [bases[i + 1] - bases[i] for i in range(k - 1)]
            if len(set(steps0)) > 1:
                raise ValueError("fused terms need equally spaced operands")
            s0 = steps0[0] if steps0 else 0
            if len(set(scal)) > 1:
                raise ValueError("fused terms must agree on broadcast per side")
            s1 = 0 if scal[0] else WORD
            aguS.append(AguConfig.from_strides(bases[0], (s0, s1), (k, self.n)))
        aguS.append(AguConfig.from_strides(out, (0, WORD), (k, self.n)))
        self._run(NtxCommand(Opcode.MAC, hwl, tuple(aguS)))
        return out

    def core_pass(self) -> None:
        self.cycles += CORE_ELEM_CYCLES * self.n
        self.core_passes += 1


def _stack(vu: VectorUnit, *arrays) -> int:
    """Place arrays back to back so fused terms are equally spaced."""
    base = vu.alloc(count=vu.n * len(arrays))
    for i, a in enumerate(arrays):
        vu.put(base + i * vu.n * WORD, a)
    return base


def _const_stack(vu: VectorUnit, *values) -> int:
    base = vu.alloc(count=len(values))
    vu.mem.load(base, np.array(values, np.float32))
    return base


def _fused2(vu, a0, a1, b0, b1, a_scalar=False, b_scalar=False):
    """a0*b0 + a1*b1 with one rounding; scalars are python floats."""
    n = vu.n
    a = _const_stack(vu, a0, a1) if a_scalar else _stack(vu, a0, a1)
    b = _const_stack(vu, b0, b1) if b_scalar else _stack(vu, b0, b1)
    out = vu.alloc()
    if a_scalar:
        _fused_scalar_side(vu, a, b, out, 2, a_is_scalar=True)
    elif b_scalar:
        _fused_scalar_side(vu, a, b, out, 2, a_is_scalar=False)
    else:
        vu.fused([((a, False), (b, False)), ((a + n * WORD, False), (b + n * WORD, False))], out)
    return vu.get(out)


def _fused_scalar_side(vu, a, b, out, k, a_is_scalar):
    n = vu.n
    vec_step = n * WORD
    if a_is_scalar:
        ag = AguConfig.from_strides(a, (WORD, 0), (k, n))
        bg = AguConfig.from_strides(b, (vec_step, WORD), (k, n))
    else:
        ag = AguConfig.from_strides(a, (vec_step, WORD), (k, n))
        bg = AguConfig.from_strides(b, (WORD, 0), (k, n))
    og = AguConfig.from_strides(out, (0, WORD), (k, n))
    vu._run(NtxCommand(Opcode.MAC, HwlConfig((k, n), 1, 1, 1), (ag, bg, og)))


def fused_dot(vu: VectorUnit, vectors, coeffs) -> np.ndarray:
    """sum_i vectors[i] * coeffs[i] per element, one rounding, coeffs scalar."""
    k = len(vectors)
    a = _stack(vu, *vectors)
    b = _const_stack(vu, *coeffs)
    out = vu.alloc()
    _fused_scalar_side(vu, a, b, out, k, a_is_scalar=False)
    return vu.get(out)


def _recip_seed(x: np.ndarray) -> np.ndarray:
    """8-bit reciprocal estimate from a table indexed by the top mantissa bits."""
    m, e = np.frexp(np.abs(x).astype(np.float64))  # m in [0.5, 1)
    idx = np.floor((m - 0.5) * (1 << (SEED_BITS + 1))).astype(np.int64)
    mid = 0.5 + (idx + 0.5) / (1 << (SEED_BITS + 1))
    seed = np.float32(1.0) / mid.astype(np.float32)
    seed = np.round(seed * (1 << SEED_BITS)) / (1 << SEED_BITS)
    return (np.sign(x) * np.ldexp(seed, -e)).astype(np.float32)


def _rsqrt_seed(x: np.ndarray) -> np.ndarray:
    m, e = np.frexp(x.astype(np.float64))
    odd = (e % 2) != 0
    m = np.where(odd, m * 2.0, m)  # [0.5, 2)
    e = np.where(odd, e - 1, e)
    idx = np.floor((m - 0.5) / 1.5 * (1 << SEED_BITS)).astype(np.int64)
    mid = 0.5 + (idx + 0.5) * 1.5 / (1 << SEED_BITS)
    seed = np.round((1.0 / np.sqrt(mid)) * (1 << SEED_BITS)) / (1 << SEED_BITS)
    return np.ldexp(seed, -e // 2).astype(np.float32)


def _recip_iter(vu, x, y, iters=3):
    nx = _neg(vu, x)
    for _ in range(iters):
        # e = 1 - x*y, then y' = y + y*e
        e = _fused2(vu, _ones(vu), nx, _ones(vu), y)
        y = _fused2(vu, y, y, _ones(vu), e)
    return y


def _neg(vu, v):
    return vu.get(vu.binary(Opcode.VMULT, vu.alloc(v), vu.const(-1.0), vu.alloc(), b_scalar=True))


@dataclass
class SpecialResult:
    values: np.ndarray
    cycles: int
    invalid: np.ndarray

    @property
    def cycles_per_element(self) -> float:
        return self.cycles / max(self.values.size, 1)


def _ones(vu):
    return np.ones(vu.n, np.float32)


def _div_core(vu, a, b):
    """a / b for finite nonzero b."""
    y = _recip_seed(b)
    vu.core_pass()
    y = _recip_iter(vu, b, y)
    q = vu.get(vu.binary(Opcode.VMULT, vu.alloc(a), vu.alloc(y), vu.alloc()))
    nb = _neg(vu, b)
    r = _fused2(vu, a, nb, _ones(vu), q)  # a - b*q exactly rounded once
    return _fused2(vu, q, r, _ones(vu), y)  # q + r*y


def _rsqrt_core(vu, x, iters=3):
    y = _rsqrt_seed(x)
    vu.core_pass()
    for _ in range(iters):
        t = vu.get(vu.binary(Opcode.VMULT, vu.alloc(y), vu.alloc(y), vu.alloc()))
        e = _fused2(vu, x, np.full(vu.n, -1.0, np.float32), t, _ones(vu))  # x*y^2 - 1
        h = vu.get(vu.binary(Opcode.VMULT, vu.alloc(e), vu.const(-0.5), vu.alloc(), b_scalar=True))
        y = _fused2(vu, y, y, _ones(vu), h)  # y - y*e/2
    return y


def _sqrt_core(vu, x):
    y = _rsqrt_core(vu, x)
    s = vu.get(vu.binary(Opcode.VMULT, vu.alloc(x), vu.alloc(y), vu.alloc()))
    ns = _neg(vu, s)
    r = _fused2(vu, x, s, _ones(vu), ns)  # x - s*s
    hy = vu.get(vu.binary(Opcode.VMULT, vu.alloc(y), vu.const(0.5), vu.alloc(), b_scalar=True))
    return _fused2(vu, s, hy, _ones(vu), r)  # s + r*y/2


_LN2_HI = np.float32(0.693145751953125)  # 11 significant bits: n*hi is exact
_LN2_LO = np.float32(math.log(2.0) - 0.693145751953125)
_LOG2E = np.float32(1.0 / math.log(2.0))
_MAGIC = np.float32(1.5 * 2**23)
_EXP_COEFFS = [1.0 / math.factorial(k) for k in range(7)]


def _exp_core(vu, x):
    # n = round(x*log2e) by adding and removing 1.5*2**23.
    t = fused_dot(vu, [x, _ones(vu)], [_LOG2E, _MAGIC])
    n = vu.get(vu.binary(Opcode.VADD, vu.alloc(t), vu.const(-_MAGIC), vu.alloc(), b_scalar=True))
    r = fused_dot(vu, [x, n, n], [1.0, -_LN2_HI, -_LN2_LO])
    p = np.full(vu.n, _EXP_COEFFS[6], np.float32)
    for c in reversed(_EXP_COEFFS[:6]):
        p = _fused2(vu, p, _ones(vu), r, np.full(vu.n, c, np.float32))
    # Core builds 2**n as a float from the integer n.
    vu.core_pass()
    ni = n.astype(np.int64)
    half_n = ni // 2
    s1 = np.ldexp(np.float32(1.0), half_n).astype(np.float32)
    s2 = np.ldexp(np.float32(1.0), ni - half_n).astype(np.float32)
    p = vu.get(vu.binary(Opcode.VMULT, vu.alloc(p), vu.alloc(s1), vu.alloc()))
    return vu.get(vu.binary(Opcode.VMULT, vu.alloc(p), vu.alloc(s2), vu.alloc()))


_SQRT_HALF = math.sqrt(0.5)


def _log_core(vu, x):
    # Core splits x = m * 2**e with m in [sqrt(1/2), sqrt(2)).
    vu.core_pass()
    m, e = np.frexp(x.astype(np.float32))
    low = m < _SQRT_HALF
    m = np.where(low, m * 2, m).astype(np.float32)
    e = np.where(low, e - 1, e).astype(np.float32)
    num = vu.get(vu.binary(Opcode.VADD, vu.alloc(m), vu.const(-1.0), vu.alloc(), b_scalar=True))
    den = vu.get(vu.binary(Opcode.VADD, vu.alloc(m), vu.const(1.0), vu.alloc(), b_scalar=True))
    s = _div_core(vu, num, den)
    z = vu.get(vu.binary(Opcode.VMULT, vu.alloc(s), vu.alloc(s), vu.alloc()))
    q = np.full(vu.n, 1.0 / 11, np.float32)
    for k in (9, 7, 5, 3, 1):
        q = _fused2(vu, q, _ones(vu), z, np.full(vu.n, 1.0 / k, np.float32))
    s2 = vu.get(vu.binary(Opcode.VMULT, vu.alloc(s), vu.const(2.0), vu.alloc(), b_scalar=True))
    u = vu.get(vu.binary(Opcode.VMULT, vu.alloc(s2), vu.alloc(q), vu.alloc()))
    return fused_dot(vu, [e, e, u], [_LN2_HI, _LN2_LO, 1.0])


KINDS = ("div", "sqrt", "rsqrt", "exp", "log")


def special_function(kind: str, x, y=None) -> SpecialResult:
    """Evaluate ``kind`` elementwise on a float32 batch.

    ``div`` computes ``x / y``. Domain violations give NaN and set the
    per-element invalid flag; IEEE special cases (zeros, infinities) are
    patched by the core.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown special function {kind!r}; expected one of {KINDS}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float32)).ravel()
    n = x.size
    vu = VectorUnit(n)
    invalid = np.zeros(n, dtype=bool)
    with np.errstate(all="ignore"):
        if kind == "div":
            if y is None:
                raise ValueError("div needs a divisor")
            yv = np.broadcast_to(np.asarray(y, dtype=np.float32), x.shape).ravel()
            ok = np.isfinite(x) & np.isfinite(yv) & (yv != 0)
            ref = (x.astype(np.float64) / yv.astype(np.float64)).astype(np.float32)
            vals = _div_core(vu, np.where(ok, x, 1), np.where(ok, yv, 1))
            vals = np.where(ok, vals, ref)
            invalid = np.isnan(vals) & ~(np.isnan(x) | np.isnan(yv))
        elif kind in ("sqrt", "rsqrt"):
            ok = np.isfinite(x) & (x > 0)
            xs = np.where(ok, x, 1).astype(np.float32)
            if kind == "sqrt":
                vals = _sqrt_core(vu, xs)
                special = np.where(x == 0, x, np.where(x == np.inf, np.inf, np.nan))
            else:
                vals = _rsqrt_core(vu, xs)
                special = np.where(x == 0, np.copysign(np.inf, x), np.where(x == np.inf, 0.0, np.nan))
            vals = np.where(ok, vals, special).astype(np.float32)
            invalid = (x < 0) & ~np.isnan(x)
        elif kind == "exp":
            ok = np.isfinite(x) & (np.abs(x) < 104)
            vals = _exp_core(vu, np.where(ok, x, 0).astype(np.float32))
            special = np.where(x > 0, np.inf, 0.0)
            special = np.where(np.isnan(x), np.nan, special)
            vals = np.where(ok, vals, special).astype(np.float32)
        else:
            ok = np.isfinite(x) & (x > 0)
            vals = _log_core(vu, np.where(ok, x, 1).astype(np.float32))
            special = np.where(x == 0, -np.inf, np.where(x == np.inf, np.inf, np.nan))
            vals = np.where(ok, vals, special).astype(np.float32)
            invalid = (x < 0) & ~np.isnan(x)
    return SpecialResult(vals.astype(np.float32), vu.cycles, invalid)
