"""A 3x3 convolution tile on the simulated cluster: utilisation, bursts, and the analytical model."""

import numpy as np

from ntxsim.kernels import oracle
from ntxsim.kernels.conv import REFERENCE_TILE_ROWS, ConvSpec, conv_forward, lower_forward, reference_tile_spec
from ntxsim.perf import ArchConfig, kernel_timing
from ntxsim.workload import LayerWorkload

spec = reference_tile_spec()
print(spec)

# Lowering turns the layer into DMA descriptors and NTX commands, one command per output channel and tile.
low = lower_forward(spec, tile_rows=REFERENCE_TILE_ROWS)
print("phases:", len(low.schedule.phases))

_, tr = low.run(timing=True)
print(f"cycles {tr.cycles}, eta_c {tr.eta_c:.3f}, eta_d {tr.eta_d:.3f}, TCDM service {tr.service_fraction:.3f}")
for unit in ("core", "dma", "ntx0"):
    print(f"  {unit:5s} busy {tr.busy_fraction(unit):6.1%}")
print("burst histogram (bytes, count, total):", tr.burst_histogram())
print(f"bytes in bursts >= 32 B: {tr.burst_fraction(32):.1%}")

# Feed the measured efficiencies back into the closed-form kernel time. The model
# assumes all eight NTX share the work; with c_out=2 only two are busy, so it
# undershoots. An eight-channel tile lines up.
def compare(spec, rows):
    _, tr = lower_forward(spec, tile_rows=rows).run(timing=True)
    seq = tr.head_tail_bytes
    w = LayerWorkload(tr.ntx_iterations, seq // 2, tr.dma_bytes - seq, seq - seq // 2)
    a = ArchConfig(clusters=1, freq=1.0, dma_clock_ratio=1.0)
    t = kernel_timing(w, a, eta_c=tr.eta_c, eta_d=tr.eta_d).t_cl
    print(f"c_out={spec.c_out}: analytical {t:.0f} cycles vs simulated {tr.cycles} ({t / tr.cycles - 1:+.1%})")


compare(spec, REFERENCE_TILE_ROWS)
compare(ConvSpec(16, 12, 16, 8, 3, 3), 2)

# Values come out identical to the exact oracle.
rng = np.random.default_rng(1)
x = rng.standard_normal((spec.c_in, spec.h, spec.w)).astype(np.float32)
k = rng.standard_normal(spec.weight_shape).astype(np.float32)
y, _ = conv_forward(x, k, tile_rows=REFERENCE_TILE_ROWS)
print("bit-equal to oracle:", np.array_equal(y, oracle.conv2d_exact(x, k)))
