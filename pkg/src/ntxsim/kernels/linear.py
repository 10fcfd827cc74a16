"""Fully connected layers as MAC commands.

The bias rides along as an extra input column of ones, so each output is a
single exactly rounded dot product including the bias.
"""

from __future__ import annotations

import numpy as np

from ..ntx import Opcode
from ..tcdm import WORD
from .plan import Lowered, ResidentPlan, loop_command


def _augment(x, w, b):
    x = np.atleast_2d(np.asarray(x, np.float32))
    w = np.asarray(w, np.float32)
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input width {x.shape[1]} does not match weight width {w.shape[1]}")
    b = np.zeros(w.shape[0], np.float32) if b is None else np.asarray(b, np.float32)
    xa = np.concatenate([x, np.ones((x.shape[0], 1), np.float32)], axis=1)
    wa = np.concatenate([w, b.reshape(-1, 1)], axis=1)
    return xa, wa


def lower_linear_forward(x, w, b=None) -> Lowered:
    """One command per sample: loops k (reduction) then o."""
    xa, wa = _augment(x, w, b)
    n, k1 = xa.shape
    o = wa.shape[0]
    plan = ResidentPlan()
    xt = plan.input(xa)
    wt = plan.input(wa)
    y = plan.tensor((n, o))
    for i in range(n):
        plan.command(loop_command(
            Opcode.MAC, (k1, o),
            [(xt.addr(0, i), (WORD, 0)), (wt.addr(0), (WORD, k1 * WORD)), (y.addr(0, i), (0, WORD))],
            init_level=1,
        ))
    plan.output(y)
    return plan.build()


def lower_linear_backward(x, w, dy) -> Lowered:
    """dx = dy W (one command per sample) and [dW | db] = dy^T [x | 1] (one per output row)."""
    xa, wa = _augment(x, w, None)
    dy = np.atleast_2d(np.asarray(dy, np.float32))
    n, k1 = xa.shape
    o = wa.shape[0]
    if dy.shape != (n, o):
        raise ValueError(f"gradient shape {dy.shape} does not match {(n, o)}")
    k = k1 - 1
    plan = ResidentPlan()
    xt = plan.input(xa)
    wt = plan.input(wa)
    dyt = plan.input(dy)
    dx = plan.tensor((n, k))
    dw = plan.tensor((o, k1))
    for i in range(n):
        plan.command(loop_command(
            Opcode.MAC, (o, k),
            [(dyt.addr(0, i), (WORD, 0)), (wt.addr(0), (k1 * WORD, WORD)), (dx.addr(0, i), (0, WORD))],
            init_level=1,
        ))
    for j in range(o):
        plan.command(loop_command(
            Opcode.MAC, (n, k1),
            [(dyt.addr(0, 0, j), (o * WORD, 0)), (xt.addr(0), (k1 * WORD, WORD)), (dw.addr(0, j), (0, WORD))],
            init_level=1,
        ))
    plan.output(dx)
    plan.output(dw)
    return plan.build()


def linear_forward(x, w, b=None) -> np.ndarray:
    (y,), _ = lower_linear_forward(x, w, b).run()
    return y.reshape(-1, np.asarray(w).shape[0])


def linear_backward(x, w, dy):
    """Returns (dx, dw, db)."""
    (dx, dwa), _ = lower_linear_backward(x, w, dy).run()
    o, k1 = np.asarray(w).shape[0], np.asarray(w).shape[1] + 1
    dwa = dwa.reshape(o, k1)
    return dx.reshape(-1, k1 - 1), dwa[:, :-1], dwa[:, -1]
