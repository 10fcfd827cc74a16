"""Max pooling and ReLU on the simulated cluster."""

from __future__ import annotations

import numpy as np

from ..ntx import Opcode
from ..tcdm import WORD
from .plan import Lowered, ResidentPlan, loop_command


def _flat(t):
    """(base, strides, bounds) walking a whole unpadded tensor as (plane, channel)."""
    c, h, w = t.shape
    if h * w > 65536:
        raise ValueError("plane too large for one loop level")
    return t.addr(0), (WORD, h * w * WORD), (h * w, c)


def _pool_dims(shape, k, stride):
    c, h, w = shape
    if k < 1 or stride < 1:
        raise ValueError("pool window and stride must be positive")
    if k > h or k > w:
        raise ValueError(f"window {k} larger than input {h}x{w}")
    return c, h, w, (h - k) // stride + 1, (w - k) // stride + 1


def lower_maxpool_forward(x, k: int, stride: int) -> Lowered:
    """MAX and ARGMAX commands over loops kx, ky (window) then ox, oy, c.

    The argmax output holds the window-relative position ky*k + kx of the
    first maximum as a float.
    """
    x = np.asarray(x, np.float32)
    c, h, w, ho, wo = _pool_dims(x.shape, k, stride)
    plan = ResidentPlan()
    xt = plan.input(x)
    y = plan.tensor((c, ho, wo))
    idx = plan.tensor((c, ho, wo))
    bounds = (k, k, wo, ho, c)
    src = (xt.addr(0), (WORD, xt.row_stride, stride * WORD, stride * xt.row_stride, xt.plane_stride))
    for op, out in ((Opcode.MAX, y), (Opcode.ARGMAX, idx)):
        dst = (out.addr(0), (0, 0, WORD, out.row_stride, out.plane_stride))
        plan.command(loop_command(op, bounds, [src, None, dst], init_level=2, init_value=-np.inf))
    plan.output(y)
    plan.output(idx)
    return plan.build()


def maxpool_forward(x, k: int, stride: int):
    """Returns (y, flat in-plane argmax indices); ties resolve to the first cell."""
    x = np.asarray(x, np.float32)
    c, h, w, ho, wo = _pool_dims(x.shape, k, stride)
    (y, rel), _ = lower_maxpool_forward(x, k, stride).run()
    rel = rel.astype(np.int64)
    oy = np.arange(ho)[:, None]
    ox = np.arange(wo)[None, :]
    flat = (oy * stride + rel // k) * w + ox * stride + rel % k
    return y, flat


def window_offsets(idx, in_shape, k: int, stride: int) -> np.ndarray:
    """Convert flat in-plane indices to window-relative positions, checking range."""
    idx = np.asarray(idx, np.int64)
    c, h, w, ho, wo = _pool_dims(in_shape, k, stride)
    if idx.shape != (c, ho, wo):
        raise ValueError(f"index shape {idx.shape} does not match pooled shape {(c, ho, wo)}")
    r, col = np.divmod(idx, w)
    dy_ = r - np.arange(ho)[:, None] * stride
    dx_ = col - np.arange(wo)[None, :] * stride
    if (idx < 0).any() or (idx >= h * w).any() or (dy_ < 0).any() or (dy_ >= k).any() \
            or (dx_ < 0).any() or (dx_ >= k).any():
        raise IndexError("pooling index outside its window")
    return dy_ * k + dx_


def lower_maxpool_backward(dy, rel, in_shape, k: int, stride: int) -> Lowered:
    """Scatter dy to the recorded maxima with masked adds.

    For each window position e, ``-(idx - e)**2 > -1/2`` holds exactly where
    idx == e, so THRESH_MASK on that value selects the gradients routed to e.
    The selected gradients are then added into the strided view of dx that
    window position e covers. Views of different e overlap when the stride
    is smaller than the window, so those adds run one after another.
    """
    dy = np.asarray(dy, np.float32)
    c, h, w, ho, wo = _pool_dims(in_shape, k, stride)
    kk = k * k
    plan = ResidentPlan()
    idt = plan.input(np.asarray(rel, np.float32))
    dyt = plan.input(dy)
    consts = plan.input(np.array([-float(e) for e in range(kk)] + [-1.0], np.float32))
    dx = plan.tensor((c, h, w))
    tmp = plan.tensor((kk * c, ho, wo))
    neg = plan.tensor((kk * c, ho, wo))
    ib, ist, ibd = _flat(idt)
    db, dst, _ = _flat(dyt)

    def view(t, e):
        return t.addr(e * c), ist

    xb, xst, xbd = _flat(dx)
    plan.command(loop_command(Opcode.MEMSET, xbd, [None, None, (xb, xst)], init_level=0))
    for e in range(kk):
        plan.command(loop_command(Opcode.VADD, ibd, [(ib, ist), (consts.addr(0, 0, e), (0, 0)), view(tmp, e)],
                                  init_level=0))
    plan.barrier()
    for e in range(kk):
        plan.command(loop_command(Opcode.VMULT, ibd, [view(tmp, e), (consts.addr(0, 0, kk), (0, 0)),
                                                      view(neg, e)], init_level=0))
    plan.barrier()
    for e in range(kk):
        plan.command(loop_command(Opcode.VMULT, ibd, [view(tmp, e), view(neg, e), view(neg, e)], init_level=0))
    plan.barrier()
    for e in range(kk):
        plan.command(loop_command(Opcode.THRESH_MASK, ibd, [view(neg, e), (db, dst), view(neg, e)],
                                  init_level=0, init_value=-0.5))
    plan.barrier()
    overlap = stride < k
    for e in range(kk):
        ky, kx = divmod(e, k)
        target = (dx.addr(0, ky, kx), (stride * WORD, stride * dx.row_stride, dx.plane_stride))
        g = (neg.addr(e * c), (WORD, wo * WORD, ho * wo * WORD))
        plan.command(loop_command(Opcode.VADD, (wo, ho, c), [target, g, target], init_level=0))
        if overlap:
            plan.barrier()
    plan.output(dx)
    return plan.build()


def maxpool_backward(dy, idx, in_shape, k: int, stride: int) -> np.ndarray:
    """Input gradient from output gradients and flat argmax indices."""
    rel = window_offsets(idx, in_shape, k, stride)
    (dx,), _ = lower_maxpool_backward(dy, rel, in_shape, k, stride).run()
    return dx


CHUNK = 8192
"""Elements per resident elementwise run (three buffers must fit the TCDM)."""


def _unary(op: Opcode, a, b=None, thr: float = 0.0) -> np.ndarray:
    a = np.asarray(a, np.float32)
    flat_a = a.ravel()
    flat_b = None if b is None else np.broadcast_to(np.asarray(b, np.float32), a.shape).ravel()
    out = np.empty_like(flat_a)
    for lo in range(0, flat_a.size, CHUNK):
        hi = min(lo + CHUNK, flat_a.size)
        plan = ResidentPlan()
        at = plan.input(flat_a[lo:hi])
        bt = plan.input(flat_b[lo:hi]) if flat_b is not None else None
        ot = plan.tensor(at.shape)
        base, st, bd = _flat(at)
        streams = [(base, st), None if bt is None else (bt.addr(0), st), (ot.addr(0), st)]
        plan.command(loop_command(op, bd, streams, init_level=0, init_value=thr))
        plan.output(ot)
        (res,), _ = plan.run()
        out[lo:hi] = res.ravel()
    return out.reshape(a.shape)


def relu_forward(x) -> np.ndarray:
    """max(x, 0) through RELU with threshold 0."""
    return _unary(Opcode.RELU, x)


def relu_backward(x, dy) -> np.ndarray:
    """dy where x > 0 else 0 (strict, so x == 0 passes nothing)."""
    return _unary(Opcode.THRESH_MASK, x, dy)
