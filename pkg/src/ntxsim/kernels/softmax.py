"""Softmax from NTX reductions plus the iterative exp and divide routines."""

from __future__ import annotations

import numpy as np

from ..ntx import AguConfig, HwlConfig, NtxCommand, Opcode
from ..special import VectorUnit, special_function
from ..tcdm import WORD


def _reduce(vu: VectorUnit, op: Opcode, a: int, b: int, init: float) -> np.float32:
    out = vu.alloc(count=1)
    hwl = HwlConfig((vu.n,), 0, 1, 1)
    bstep = 0 if op is not Opcode.MAC else WORD
    vu._run(NtxCommand(op, hwl, (AguConfig(a, (WORD,)), AguConfig(b, (bstep,)), AguConfig(out)), init))
    return vu.mem.dump(out, 1)[0]


def softmax_row(x):
    """Probabilities of one vector and the cycles spent: max, shift, exp, exact sum, divide."""
    x = np.asarray(x, np.float32).ravel()
    if not np.isfinite(x).all():
        raise ValueError("softmax needs finite inputs")
    vu = VectorUnit(x.size)
    xa = vu.alloc(x)
    m = _reduce(vu, Opcode.MAX, xa, xa, -np.inf)
    shifted = vu.get(vu.binary(Opcode.VADD, xa, vu.const(-m), vu.alloc(), b_scalar=True))
    e = special_function("exp", shifted)
    ea = vu.alloc(e.values)
    total = _reduce(vu, Opcode.MAC, ea, vu.alloc(np.ones(x.size, np.float32)), 0.0)
    p = special_function("div", e.values, np.full(x.size, total, np.float32))
    return p.values, vu.cycles + e.cycles + p.cycles


def softmax(x) -> np.ndarray:
    """Softmax along the last axis."""
    x = np.asarray(x, np.float32)
    rows = x.reshape(-1, x.shape[-1]) if x.ndim else x.reshape(1, 1)
    out = np.stack([softmax_row(r)[0] for r in rows])
    return out.reshape(x.shape)
