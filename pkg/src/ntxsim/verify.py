"""Randomized self-checks of the simulated kernels against independent oracles.

Four suites:

* ``oracle``: convolution (all three passes), max pooling, ReLU and
  optimizer updates on the cluster versus exact single-rounding references.
* ``gradient``: NTX-computed convolution gradients versus central
  differences of a float64 forward pass.
* ``decomposition``: strided input gradients via phase sub-kernels versus
  the zero-stuffed oracle, for every kernel size up to 5 and stride up to 4.
* ``accumulator``: wide-accumulator dot products versus rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .accumulator import WideAccumulator
from .kernels import oracle
from .kernels.conv import conv_backward_data, conv_backward_weight, conv_forward, decompose_strided_backward
from .kernels.nonlinear import maxpool_backward, maxpool_forward, relu_backward, relu_forward
from .kernels.optim import KINDS as OPTIMIZERS
from .kernels.optim import OptimizerState, optimizer_step

SUITES = ("oracle", "gradient", "decomposition", "accumulator")
GRAD_RTOL = 1e-3


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def record(self, ok: bool, what: str) -> None:
        self.total += 1
        if ok:
            self.passed += 1
        else:
            self.failures.append(what)


def round_to_f32(v: Fraction) -> np.float32:
    """Round a rational to float32, ties to even, with subnormals."""
    if v == 0:
        return np.float32(0.0)
    sign = -1 if v < 0 else 1
    a = abs(v)
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** e > a:
        e -= 1
    q = max(e - 23, -149)  # quantum of the result
    scaled = a / Fraction(2) ** q
    m, rem = divmod(scaled.numerator, scaled.denominator)
    twice = 2 * rem
    if twice > scaled.denominator or (twice == scaled.denominator and m & 1):
        m += 1
    val = math.ldexp(m, q)
    if val > float(np.finfo(np.float32).max):
        return np.float32(sign * np.inf)
    return np.float32(sign * val)


def exact_fma_sum(pairs) -> np.float32:
    """Single rounding of sum(a*b) over float32 pairs, in rationals."""
    return round_to_f32(sum((Fraction(float(np.float32(a))) * Fraction(float(np.float32(b))) for a, b in pairs),
                            Fraction(0)))


def _perturb(a: np.ndarray) -> np.ndarray:
    """Nudge the first element by one ulp (fault injection)."""
    a = np.array(a, np.float32, copy=True)
    flat = a.reshape(-1)
    flat[0] = np.nextafter(flat[0], np.float32(np.inf))
    return a


def _conv_case(rng):
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, min(k, 2)))
    h, w = int(rng.integers(k, 8)), int(rng.integers(k, 8))
    x = rng.standard_normal((c_in, h, w)).astype(np.float32)
    wt = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
    return x, wt, stride, pad


def _oracle_instance(i: int, rng, fault: bool):
    """(passed, description) for instance ``i``; kinds rotate."""
    kind = ("conv_fwd", "conv_bwd_data", "conv_bwd_weight", "maxpool", "relu", "optimizer")[i % 6]
    nudge = _perturb if fault else (lambda a: a)
    if kind.startswith("conv"):
        x, wt, s, p = _conv_case(rng)
        y_ref = oracle.conv2d_exact(x, wt, s, p)
        if kind == "conv_fwd":
            got, ref = conv_forward(x, wt, s, p)[0], y_ref
        elif kind == "conv_bwd_data":
            dy = rng.standard_normal(y_ref.shape).astype(np.float32)
            got = conv_backward_data(dy, wt, s, p, x.shape[1:])[0]
            ref = oracle.conv_backward_data_exact(dy, wt, s, p, x.shape[1:])
        else:
            dy = rng.standard_normal(y_ref.shape).astype(np.float32)
            got = conv_backward_weight(x, dy, wt.shape[2], wt.shape[3], s, p)[0]
            ref = oracle.conv_backward_weight_exact(x, dy, wt.shape[2], wt.shape[3], s, p)
        desc = f"{kind} x{x.shape} w{wt.shape} stride {s} pad {p}"
        return np.array_equal(nudge(got), ref), desc
    if kind == "maxpool":
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, k + 1))
        shape = (int(rng.integers(1, 4)), int(rng.integers(k, 8)), int(rng.integers(k, 8)))
        x = rng.integers(-4, 5, shape).astype(np.float32)  # small integers force ties
        y, idx = maxpool_forward(x, k, s)
        y_ref, idx_ref = oracle.maxpool_forward_ref(x, k, s)
        dy = rng.integers(-8, 9, y.shape).astype(np.float32)
        dx = maxpool_backward(dy, idx, shape, k, s)
        ok = np.array_equal(nudge(y), y_ref) and np.array_equal(idx, idx_ref) and \
            np.array_equal(dx, oracle.maxpool_backward_ref(dy, idx_ref, shape))
        return ok, f"maxpool x{shape} k {k} stride {s}"
    if kind == "relu":
        x = rng.standard_normal(int(rng.integers(1, 200))).astype(np.float32)
        x[rng.random(x.size) < 0.1] = 0.0
        dy = rng.standard_normal(x.size).astype(np.float32)
        ok = np.array_equal(nudge(relu_forward(x)), np.maximum(x, np.float32(0))) and \
            np.array_equal(relu_backward(x, dy), np.where(x > 0, dy, np.float32(0)))
        return ok, f"relu n={x.size}"
    opt = OPTIMIZERS[(i // 6) % len(OPTIMIZERS)]
    n = int(rng.integers(1, 12))
    theta, g = (rng.standard_normal(n).astype(np.float32) for _ in range(2))
    st = OptimizerState(theta, v=rng.standard_normal(n), r=rng.random(n), m=rng.standard_normal(n) * 0.1,
                        s=rng.random(n) * 0.01, t=int(rng.integers(0, 5)), eps=float(rng.uniform(1e-3, 0.1)))
    new, applied = optimizer_step(opt, st, g)
    return applied and _optimizer_matches(opt, st, g, nudge(new.theta), new), f"{opt} n={n}"


def _optimizer_matches(kind, st: OptimizerState, g, theta, new) -> bool:
    eps = np.float32(st.eps)
    if kind == "sgd":
        ref = [exact_fma_sum([(t, 1), (-eps, gi)]) for t, gi in zip(st.theta, g)]
        return np.array_equal(theta, np.array(ref, np.float32))
    if kind == "momentum":
        v = np.array([exact_fma_sum([(np.float32(st.alpha), vi), (-eps, gi)]) for vi, gi in zip(st.v, g)],
                     np.float32)
        ref = np.array([exact_fma_sum([(t, 1), (vi, 1)]) for t, vi in zip(st.theta, v)], np.float32)
        return np.array_equal(new.v, v) and np.array_equal(theta, ref)
    # Square roots and divisions are iterative; compare against float64 within a few ulp,
    # using the float32-rounded state and coefficients that the kernel sees.
    f = lambda a: np.asarray(a, np.float32).astype(np.float64)  # noqa: E731
    g64, th = f(g), f(st.theta)
    if kind == "rmsprop":
        rho = np.float32(st.rho)
        r = f(rho) * f(st.r) + f(np.float32(1) - rho) * g64 * g64
        step = f(eps) * g64 / np.sqrt(r + f(st.delta))
    else:
        t = st.t + 1
        b1, b2 = np.float32(st.beta1), np.float32(st.beta2)
        m = f(b1) * f(st.m) + f(np.float32(1) - b1) * g64
        s = f(b2) * f(st.s) + f(np.float32(1) - b2) * g64 * g64
        mhat, shat = m / (1 - float(b1) ** t), s / (1 - float(b2) ** t)
        step = f(eps) * mhat / (np.sqrt(shat) + f(st.delta))
    ref = th - step
    tol = 2.0 ** -20 * (np.abs(th) + np.abs(step)) + 2.0 ** -126
    return bool(np.all(np.abs(theta.astype(np.float64) - ref) <= tol))


def oracle_suite(rng, cases: int, fault: bool = False) -> SuiteResult:
    res = SuiteResult("oracle")
    for i in range(cases):
        ok, desc = _oracle_instance(i, rng, fault and i == 0)
        res.record(ok, desc)
    return res


def gradient_suite(rng, cases: int, fault: bool = False) -> SuiteResult:
    """Loss sum(y * r): dL/dx and dL/dw against central differences."""
    res = SuiteResult("gradient")
    for i in range(cases):
        x, wt, s, p = _conv_case(rng)
        r = rng.standard_normal(oracle.conv2d_f64(x, wt, s, p).shape)
        dx = conv_backward_data(r.astype(np.float32), wt, s, p, x.shape[1:])[0].astype(np.float64)
        dw = conv_backward_weight(x, r.astype(np.float32), wt.shape[2], wt.shape[3], s, p)[0].astype(np.float64)
        if fault and i == 0:
            dx = dx + 1.0
        r32 = r.astype(np.float32).astype(np.float64)
        loss = lambda xx, ww: float(np.sum(oracle.conv2d_f64(xx, ww, s, p) * r32))  # noqa: E731
        h = 1e-3
        worst = 0.0
        for target, grad in (("x", dx), ("w", dw)):
            arr = x if target == "x" else wt
            j = tuple(int(rng.integers(0, n)) for n in arr.shape)
            up, dn = arr.astype(np.float64), arr.astype(np.float64)
            up[j] += h
            dn[j] -= h
            num = (loss(up, wt) - loss(dn, wt)) / (2 * h) if target == "x" else \
                (loss(x.astype(np.float64), up) - loss(x.astype(np.float64), dn)) / (2 * h)
            worst = max(worst, abs(grad[j] - num) / max(abs(num), 1.0))
        res.record(worst <= GRAD_RTOL, f"conv grad x{x.shape} w{wt.shape} stride {s} pad {p}: rel {worst:.2e}")
    return res


def decomposition_suite(rng, max_kernel: int = 5, max_stride: int = 4, fault: bool = False) -> SuiteResult:
    """Every (U, stride): the phase taps partition the kernel and the NTX result is bit-equal."""
    res = SuiteResult("decomposition")
    for u in range(1, max_kernel + 1):
        for s in range(1, max_stride + 1):
            dec = decompose_strided_backward(u, s)
            c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            pad = int(rng.integers(0, u))
            ho, wo = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            in_hw = ((ho - 1) * s + u - 2 * pad, (wo - 1) * s + u - 2 * pad)
            if min(in_hw) < 1:
                pad = 0
                in_hw = ((ho - 1) * s + u, (wo - 1) * s + u)
            dy = rng.standard_normal((c_out, ho, wo)).astype(np.float32)
            w = rng.standard_normal((c_out, c_in, u, u)).astype(np.float32)
            got = conv_backward_data(dy, w, s, pad, in_hw)[0]
            if fault and u == 1 and s == 1:
                got = _perturb(got)
            ref = oracle.conv_backward_data_exact(dy, w, s, pad, in_hw)
            res.record(dec.covers_kernel() and np.array_equal(got, ref), f"U={u} stride={s} pad={pad}")
    return res


def accumulator_suite(rng, cases: int, fault: bool = False) -> SuiteResult:
    """Dot products over wide exponent ranges, including heavy cancellation."""
    res = SuiteResult("accumulator")
    for i in range(cases):
        n = int(rng.integers(1, 64))
        a = (rng.standard_normal(n) * 2.0 ** rng.integers(-60, 60, n)).astype(np.float32)
        b = (rng.standard_normal(n) * 2.0 ** rng.integers(-60, 60, n)).astype(np.float32)
        if i % 3 == 0 and n > 1:
            # Append the negated products so almost everything cancels.
            a = np.concatenate([a, -a, [np.float32(1e-30)]]).astype(np.float32)
            b = np.concatenate([b, b, [np.float32(1e-10)]]).astype(np.float32)
        acc = WideAccumulator()
        acc.accumulate(a, b)
        got = acc.reduce()
        if fault and i == 0:
            got = np.nextafter(got, np.float32(np.inf))
        ref = exact_fma_sum(zip(a, b))
        res.record(got == ref or (np.isnan(got) and np.isnan(ref)), f"dot n={a.size}")
    return res


def run_suites(seed: int, cases: int = 500, fault: str | None = None) -> list:
    """Run all suites deterministically from ``seed``; ``fault`` corrupts one named suite."""
    if fault is not None and fault not in SUITES:
        raise ValueError(f"unknown suite {fault!r}")
    rngs = [np.random.default_rng([seed, k]) for k in range(len(SUITES))]
    return [
        oracle_suite(rngs[0], cases, fault == "oracle"),
        gradient_suite(rngs[1], max(cases // 10, 1), fault == "gradient"),
        decomposition_suite(rngs[2], fault=fault == "decomposition"),
        accumulator_suite(rngs[3], max(cases // 5, 1), fault == "accumulator"),
    ]
