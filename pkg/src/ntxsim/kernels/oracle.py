"""Direct reference implementations.

``*_exact`` oracles sum float32 products exactly and round once per output,
which is what a wide-accumulator MAC produces. ``*_f64`` versions are plain
float64 references for gradient and precision checks.
"""

from __future__ import annotations

import numpy as np

from ..accumulator import round_fixed_to_f32, segment_sums


def out_size(n: int, u: int, stride: int, pad: int) -> int:
    size = (n + 2 * pad - u) // stride + 1
    if size < 1:
        raise ValueError(f"kernel {u} with stride {stride} and pad {pad} does not fit input {n}")
    return size


def _round_all(values) -> np.ndarray:
    return np.array([round_fixed_to_f32(v) for v in values], dtype=np.float32)


def _patches(x: np.ndarray, uh: int, uw: int, stride: int, pad: int) -> np.ndarray:
    """(Ho, Wo, C, uh, uw) view of the padded input."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = out_size(h, uh, stride, pad)
    wo = out_size(w, uw, stride, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (uh, uw), axis=(1, 2))  # C, H', W', uh, uw
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    return np.transpose(win, (1, 2, 0, 3, 4))


def conv2d_exact(x, w, stride: int = 1, pad: int = 0) -> np.ndarray:
    """y[co, oy, ox] = sum x*w over (ci, ky, kx), rounded once."""
    x = np.asarray(x, np.float32)
    w = np.asarray(w, np.float32)
    co, ci, uh, uw = w.shape
    p = _patches(x, uh, uw, stride, pad)
    ho, wo = p.shape[:2]
    k = ci * uh * uw
    a = np.broadcast_to(p.reshape(ho, wo, 1, k), (ho, wo, co, k))
    b = np.broadcast_to(w.reshape(1, 1, co, k), (ho, wo, co, k))
    y = _round_all(segment_sums(a.ravel(), b.ravel(), ho * wo * co)).reshape(ho, wo, co)
    return np.transpose(y, (2, 0, 1))


def conv2d_f64(x, w, stride: int = 1, pad: int = 0) -> np.ndarray:
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    p = _patches(x, w.shape[2], w.shape[3], stride, pad)
    return np.einsum("hwcij,ocij->ohw", p, w)


def conv2d_f32_sequential(x, w, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Float32 accumulation in loop order (ci, ky, kx), rounding after every add."""
    x = np.asarray(x, np.float32)
    w = np.asarray(w, np.float32)
    co, ci, uh, uw = w.shape
    p = _patches(x, uh, uw, stride, pad)
    ho, wo = p.shape[:2]
    acc = np.zeros((co, ho, wo), np.float32)
    for c in range(ci):
        for i in range(uh):
            for j in range(uw):
                term = (w[:, c, i, j][:, None, None] * p[None, :, :, c, i, j]).astype(np.float32)
                acc = (acc + term).astype(np.float32)
    return acc


def zero_stuff(dy, stride: int) -> np.ndarray:
    """Insert ``stride - 1`` zeros between neighbouring output gradients."""
    dy = np.asarray(dy)
    c, h, w = dy.shape
    out = np.zeros((c, (h - 1) * stride + 1, (w - 1) * stride + 1), dy.dtype)
    out[:, ::stride, ::stride] = dy
    return out


def _full_correlation_inputs(dy, w, stride, pad, in_hw):
    """Zero-stuffed, fully padded gradient and flipped, transposed kernel."""
    co, ci, uh, uw = w.shape
    h, wd = in_hw
    z = zero_stuff(dy, stride)
    hp, wp = h + 2 * pad, wd + 2 * pad
    # Stuffed gradient covers rows 0..(Ho-1)*s; pad to reach the full input.
    extra_h = hp - (z.shape[1] + uh - 1)
    extra_w = wp - (z.shape[2] + uw - 1)
    z = np.pad(z, ((0, 0), (uh - 1, uh - 1 + extra_h), (uw - 1, uw - 1 + extra_w)))
    wf = np.transpose(w[:, :, ::-1, ::-1], (1, 0, 2, 3))  # ci, co, uh, uw
    return z, wf


def conv_backward_data_exact(dy, w, stride: int = 1, pad: int = 0, in_hw=None) -> np.ndarray:
    """Input gradient: zero-stuffed gradient correlated with the flipped kernel."""
    dy = np.asarray(dy, np.float32)
    w = np.asarray(w, np.float32)
    co, ci, uh, uw = w.shape
    if in_hw is None:
        in_hw = ((dy.shape[1] - 1) * stride + uh - 2 * pad, (dy.shape[2] - 1) * stride + uw - 2 * pad)
    z, wf = _full_correlation_inputs(dy, w, stride, pad, in_hw)
    dxp = conv2d_exact(z, wf, 1, 0)
    h, wd = in_hw
    return dxp[:, pad: pad + h, pad: pad + wd]


def conv_backward_data_f64(dy, w, stride: int = 1, pad: int = 0, in_hw=None) -> np.ndarray:
    dy = np.asarray(dy, np.float64)
    w = np.asarray(w, np.float64)
    co, ci, uh, uw = w.shape
    if in_hw is None:
        in_hw = ((dy.shape[1] - 1) * stride + uh - 2 * pad, (dy.shape[2] - 1) * stride + uw - 2 * pad)
    h, wd = in_hw
    dxp = np.zeros((ci, h + 2 * pad, wd + 2 * pad))
    for oy in range(dy.shape[1]):
        for ox in range(dy.shape[2]):
            dxp[:, oy * stride: oy * stride + uh, ox * stride: ox * stride + uw] += np.einsum(
                "o,ocij->cij", dy[:, oy, ox], w)
    return dxp[:, pad: pad + h, pad: pad + wd]


def conv_backward_weight_exact(x, dy, uh: int, uw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Weight gradient dw[co, ci, ky, kx] = sum over outputs of x * dy, rounded once."""
    x = np.asarray(x, np.float32)
    dy = np.asarray(dy, np.float32)
    co, ho, wo = dy.shape
    p = _patches(x, uh, uw, stride, pad)[:ho, :wo]  # ho, wo, ci, uh, uw
    ci = x.shape[0]
    k = ho * wo
    a = np.transpose(p, (2, 3, 4, 0, 1)).reshape(1, ci * uh * uw, k)
    a = np.broadcast_to(a, (co, ci * uh * uw, k))
    b = np.broadcast_to(dy.reshape(co, 1, k), (co, ci * uh * uw, k))
    dw = _round_all(segment_sums(a.ravel(), b.ravel(), co * ci * uh * uw))
    return dw.reshape(co, ci, uh, uw)


def conv_backward_weight_f64(x, dy, uh: int, uw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    p = _patches(np.asarray(x, np.float64), uh, uw, stride, pad)[: dy.shape[1], : dy.shape[2]]
    return np.einsum("hwcij,ohw->ocij", p, np.asarray(dy, np.float64))


def maxpool_forward_ref(x, k: int, stride: int):
    """Max pooling with first-occurrence argmax; indices are flat within each plane."""
    x = np.asarray(x, np.float32)
    c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    y = np.empty((c, ho, wo), np.float32)
    idx = np.empty((c, ho, wo), np.int64)
    for oy in range(ho):
        for ox in range(wo):
            win = x[:, oy * stride: oy * stride + k, ox * stride: ox * stride + k].reshape(c, -1)
            j = win.argmax(axis=1)
            y[:, oy, ox] = win[np.arange(c), j]
            idx[:, oy, ox] = (oy * stride + j // k) * w + ox * stride + j % k
    return y, idx


def maxpool_backward_ref(dy, idx, in_shape) -> np.ndarray:
    """Scatter-add each gradient to its recorded input position."""
    c, h, w = in_shape
    idx = np.asarray(idx)
    if (idx < 0).any() or (idx >= h * w).any():
        raise IndexError("pooling index out of range")
    dx = np.zeros((c, h * w), np.float64)
    for ch in range(c):
        np.add.at(dx[ch], idx[ch].ravel(), np.asarray(dy[ch], np.float64).ravel())
    return dx.reshape(in_shape).astype(np.float32)


def linear_exact(x, w, b=None) -> np.ndarray:
    """y[n, o] = sum_k w[o, k] x[n, k] + b[o], rounded once per output."""
    x = np.atleast_2d(np.asarray(x, np.float32))
    w = np.asarray(w, np.float32)
    if b is not None:
        x = np.concatenate([x, np.ones((x.shape[0], 1), np.float32)], axis=1)
        w = np.concatenate([w, np.asarray(b, np.float32).reshape(-1, 1)], axis=1)
    n, k = x.shape
    o = w.shape[0]
    a = np.broadcast_to(x[:, None, :], (n, o, k))
    bb = np.broadcast_to(w[None, :, :], (n, o, k))
    return _round_all(segment_sums(a.ravel(), bb.ravel(), n * o)).reshape(n, o)
