"""Parameter updates built from fused NTX vector commands.

Every update that combines two products, such as ``alpha*v - eps*g``, runs as
one two-term MAC and is rounded once. Square roots and divisions use the
iterative special-function routines. A gradient containing NaN or Inf
poisons the wide accumulator of a screening MAC; the update is then skipped
and flagged.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..ntx import AguConfig, HwlConfig, NtxCommand, Opcode, execute_command
from ..special import VectorUnit, _fused2, special_function
from ..tcdm import WORD

KINDS = ("sgd", "momentum", "rmsprop", "adam")


@dataclass
class OptimizerState:
    """Parameters plus the per-method state tensors and hyperparameters.

    ``eps`` is the learning rate, ``alpha`` the momentum factor, ``rho`` the
    RMSProp decay, ``delta`` the stabiliser, ``beta1``/``beta2`` the Adam
    moment decays.
    """

    theta: np.ndarray
    v: np.ndarray = None
    r: np.ndarray = None
    m: np.ndarray = None
    s: np.ndarray = None
    t: int = 0
    eps: float = 0.01
    alpha: float = 0.9
    rho: float = 0.9
    delta: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    cycles: int = 0
    skipped: int = field(default=0)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, np.float32)
        for name in ("v", "r", "m", "s"):
            val = getattr(self, name)
            val = np.zeros_like(self.theta) if val is None else np.asarray(val, np.float32)
            if val.shape != self.theta.shape:
                raise ValueError(f"state {name} has shape {val.shape}, parameters {self.theta.shape}")
            setattr(self, name, val)
        if (self.r < 0).any() or (self.s < 0).any():
            raise ValueError("squared-gradient accumulators must be non-negative")


def gradient_is_finite(g) -> bool:
    """Screen with a MAC of g against itself; any NaN or Inf sets the invalid flag."""
    g = np.asarray(g, np.float32).ravel()
    vu = VectorUnit(max(g.size, 1))
    a = vu.alloc(np.resize(g, vu.n) if g.size else np.zeros(1, np.float32))
    out = vu.alloc(count=1)
    cmd = NtxCommand(Opcode.MAC, HwlConfig((vu.n,), 0, 1, 1), (AguConfig(a, (WORD,)), AguConfig(a, (WORD,)),
                                                                AguConfig(out)))
    return not execute_command(cmd, vu.mem).invalid


def _vec(vu, op, a, b, b_scalar=False):
    bb = vu.const(b) if b_scalar else vu.alloc(b)
    return vu.get(vu.binary(op, vu.alloc(a), bb, vu.alloc(), b_scalar=b_scalar))


def optimizer_step(kind: str, state: OptimizerState, g) -> tuple[OptimizerState, bool]:
    """Apply one update; returns (new state, True if applied)."""
    if kind not in KINDS:
        raise ValueError(f"unknown optimizer {kind!r}; expected one of {KINDS}")
    g = np.asarray(g, np.float32)
    if g.shape != state.theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {state.theta.shape}")
    new = copy.deepcopy(state)
    if not gradient_is_finite(g):
        new.skipped += 1
        return new, False
    shape = g.shape
    n = max(g.size, 1)
    flat = {k: np.resize(getattr(state, k).ravel(), n) for k in ("theta", "v", "r", "m", "s")}
    gf = np.resize(g.ravel(), n)
    vu = VectorUnit(n)
    ones = np.ones(n, np.float32)
    extra = 0
    eps = np.float32(state.eps)
    if kind == "sgd":
        theta = _fused2(vu, flat["theta"], gf, ones, np.full(n, -eps, np.float32))
    elif kind == "momentum":
        v = _fused2(vu, flat["v"], gf, np.full(n, state.alpha, np.float32), np.full(n, -eps, np.float32))
        theta = _vec(vu, Opcode.VADD, flat["theta"], v)
        new.v = v[: g.size].reshape(shape)
    elif kind == "rmsprop":
        gg = _vec(vu, Opcode.VMULT, gf, gf)
        r = _fused2(vu, flat["r"], gg, np.full(n, state.rho, np.float32),
                    np.full(n, np.float32(1) - np.float32(state.rho), np.float32))
        den = special_function("sqrt", _vec(vu, Opcode.VADD, r, np.float32(state.delta), b_scalar=True))
        step = special_function("div", _vec(vu, Opcode.VMULT, gf, eps, b_scalar=True), den.values)
        theta = _vec(vu, Opcode.VADD, flat["theta"], _vec(vu, Opcode.VMULT, step.values, -1.0, b_scalar=True))
        extra = den.cycles + step.cycles
        new.r = r[: g.size].reshape(shape)
    else:
        t = state.t + 1
        b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
        m = _fused2(vu, flat["m"], gf, np.full(n, b1, np.float32), np.full(n, np.float32(1) - b1, np.float32))
        gg = _vec(vu, Opcode.VMULT, gf, gf)
        s = _fused2(vu, flat["s"], gg, np.full(n, b2, np.float32), np.full(n, np.float32(1) - b2, np.float32))
        # Bias corrections are scalars prepared by the core.
        c1 = np.float32(1.0 / (1.0 - float(b1) ** t))
        c2 = np.float32(1.0 / (1.0 - float(b2) ** t))
        mhat = _vec(vu, Opcode.VMULT, m, c1, b_scalar=True)
        shat = _vec(vu, Opcode.VMULT, s, c2, b_scalar=True)
        root = special_function("sqrt", shat)
        den = _vec(vu, Opcode.VADD, root.values, np.float32(state.delta), b_scalar=True)
        step = special_function("div", _vec(vu, Opcode.VMULT, mhat, eps, b_scalar=True), den)
        theta = _vec(vu, Opcode.VADD, flat["theta"], _vec(vu, Opcode.VMULT, step.values, -1.0, b_scalar=True))
        extra = root.cycles + step.cycles
        new.m = m[: g.size].reshape(shape)
        new.s = s[: g.size].reshape(shape)
        new.t = t
    new.theta = theta[: g.size].reshape(shape)
    new.cycles += vu.cycles + extra
    return new, True
