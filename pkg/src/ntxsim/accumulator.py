"""Exact fixed-point accumulation of float32 products.

Every float32 is an integer mantissa times a power of two with exponent at
least -149, so every product of two float32 values is an integer multiple of
2**-298. Holding sums as Python integers in units of 2**-298 makes accumulation
exact and order independent; a single round-to-nearest-even happens on reduce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LSB_EXP = -298
"""Weight of the least significant accumulator bit (2**LSB_EXP)."""

MAG_BITS = 554
"""Bits needed to hold the magnitude of the largest float32 product."""

GUARD_BITS = 24
"""Carry guard bits; at least 2**24 products can be summed without overflow."""

WIDTH = MAG_BITS + GUARD_BITS + 1
"""Total register width including the sign bit."""

_LIMIT = 1 << (MAG_BITS + GUARD_BITS)
_F32_MIN_EXP = -149  # exponent of the smallest subnormal
_F32_OVERFLOW = 128  # values >= 2**128 round to infinity


def split_f32(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decompose float32 values into (signed mantissa, exponent, finite mask).

    For finite inputs ``x == mant * 2.0**exp`` holds exactly, with
    ``|mant| < 2**24`` and ``exp >= -149``.
    """
    x = np.asarray(x, dtype=np.float32)
    bits = x.view(np.uint32).astype(np.int64)
    sign = np.where(bits >> 31 != 0, -1, 1)
    efield = (bits >> 23) & 0xFF
    frac = bits & 0x7FFFFF
    normal = efield != 0
    mant = np.where(normal, frac | 0x800000, frac) * sign
    exp = np.where(normal, efield - 150, _F32_MIN_EXP)
    finite = efield != 0xFF
    return mant, exp, finite


def f32_to_fixed(x: float) -> int:
    """Exact fixed-point representation (units of 2**-298) of a finite float32."""
    m, e, fin = split_f32(np.float32(x))
    if not bool(fin):
        raise ValueError("non-finite value has no fixed-point representation")
    return int(m) << (int(e) - LSB_EXP)


def round_fixed_to_f32(value: int, lsb_exp: int = LSB_EXP) -> np.float32:
    """Round ``value * 2**lsb_exp`` to float32, nearest-even, with subnormals.

    Exact zero gives +0.0 and magnitudes at or beyond 2**128 after rounding
    give signed infinity.
    """
    if value == 0:
        return np.float32(0.0)
    neg = value < 0
    a = -value if neg else value
    nbits = a.bit_length()
    shift = max(nbits - 24, _F32_MIN_EXP - lsb_exp)
    if shift > 0:
        q = a >> shift
        rem = a - (q << shift)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
    else:
        q = a << -shift
        shift = 0
    exp = shift + lsb_exp
    if q.bit_length() + exp > _F32_OVERFLOW:
        out = math.inf
    else:
        out = math.ldexp(float(q), exp)
    return np.float32(-out if neg else out)


def exact_dot(a, b) -> int:
    """Exact fixed-point sum of elementwise products (finite inputs only)."""
    return int(segment_sums(np.ravel(a), np.ravel(b), 1)[0])


def segment_sums(a, b, nseg: int) -> list[int]:
    """Exact product sums of equal-length contiguous segments.

    ``a`` and ``b`` are flat float32 arrays whose length is a multiple of
    ``nseg``; segment ``k`` covers elements ``[k*L, (k+1)*L)``. Returns one
    Python integer per segment in units of 2**-298. Non-finite inputs must be
    screened by the caller.
    """
    a = np.asarray(a, dtype=np.float32).ravel()
    b = np.asarray(b, dtype=np.float32).ravel()
    n = a.size
    if nseg == 0:
        return []
    seglen = n // nseg
    ma, ea, _ = split_f32(a)
    mb, eb, _ = split_f32(b)
    prod = ma * mb  # |prod| < 2**48
    nz = prod != 0
    exps = np.where(nz, ea + eb, 0)
    if not nz.any():
        return [0] * nseg
    emin = int(exps[nz].min())
    exps = np.where(nz, exps, emin)
    width = int(exps[nz].max()) - emin + 1
    seg_id = np.arange(n) // max(seglen, 1)
    sums = [0] * nseg
    # 2**14 products of magnitude < 2**48 cannot overflow an int64 bucket.
    chunk = 1 << 14
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        sid = seg_id[lo:hi]
        s0 = int(sid[0])
        s1 = int(sid[-1]) + 1
        buckets = np.zeros((s1 - s0, width), dtype=np.int64)
        np.add.at(buckets, (sid - s0, exps[lo:hi] - emin), np.where(nz[lo:hi], prod[lo:hi], 0))
        for row, k in enumerate(range(s0, s1)):
            brow = buckets[row]
            cols = np.flatnonzero(brow)
            if cols.size == 0:
                continue
            acc = 0
            for c in cols.tolist():
                acc += int(brow[c]) << (c + emin - LSB_EXP)
            sums[k] += acc
    return sums


@dataclass
class WideAccumulator:
    """Fixed-point register with binary point at 2**-298.

    ``value`` is a Python integer in units of 2**-298. ``invalid`` is the
    sticky flag raised by NaN or infinite operands; once set the register
    reduces to NaN until cleared by ``init``.
    """

    value: int = 0
    invalid: bool = False
    overflow: bool = False

    def init(self, x: float = 0.0) -> None:
        x = np.float32(x)
        self.invalid = not np.isfinite(x)
        self.overflow = False
        self.value = 0 if self.invalid else f32_to_fixed(x)

    def fmac(self, a: float, b: float) -> "WideAccumulator":
        """Add the exact product a*b."""
        a = np.float32(a)
        b = np.float32(b)
        if not (np.isfinite(a) and np.isfinite(b)):
            self.invalid = True
            return self
        self.value += f32_to_fixed(a) * f32_to_fixed(b) >> -LSB_EXP
        self._check()
        return self

    def add_fixed(self, v: int) -> "WideAccumulator":
        self.value += v
        self._check()
        return self

    def accumulate(self, a, b) -> "WideAccumulator":
        """Add all products of two equally shaped float32 arrays."""
        a = np.asarray(a, dtype=np.float32).ravel()
        b = np.asarray(b, dtype=np.float32).ravel()
        if a.size == 0:
            return self
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            self.invalid = True
            return self
        return self.add_fixed(exact_dot(a, b))

    def _check(self) -> None:
        if abs(self.value) >= _LIMIT:
            self.overflow = True

    def reduce(self) -> np.float32:
        if self.invalid:
            return np.float32(np.nan)
        return round_fixed_to_f32(self.value)
