"""Why a wide accumulator: one rounding per dot product instead of one per add."""

import numpy as np

from ntxsim.accumulator import WideAccumulator
from ntxsim.kernels import oracle
from ntxsim.kernels.conv import conv_forward

rng = np.random.default_rng(0)

# Big terms that cancel swallow a small one under float32 running sums.
a = np.array([1e20, 1.0, -1e20], np.float32)
b = np.ones(3, np.float32)
running = np.float32(0)
for x, y in zip(a, b):
    running = np.float32(running + x * y)
print("float32 running sum:", running)
print("wide accumulator:   ", WideAccumulator().accumulate(a, b).reduce())

# The same effect on a 3x3 layer with 64 input channels, measured against float64.
x = rng.standard_normal((64, 10, 10)).astype(np.float32) * 50
w = rng.standard_normal((8, 64, 3, 3)).astype(np.float32)
ref = oracle.conv2d_f64(x, w)
y, _ = conv_forward(x, w)
seq = oracle.conv2d_f32_sequential(x, w)
rel = lambda v: float(np.max(np.abs(v - ref) / np.abs(ref)))  # noqa: E731
print(f"max relative error, NTX:              {rel(y):.3g}")
print(f"max relative error, float32 in order: {rel(seq):.3g}")
