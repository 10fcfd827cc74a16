"""Per-layer cube model for GoogLeNet, then the frequency sweep for each configuration."""

from ntxsim.perf import CONFIGS, frequency_grid, load_config, network_metrics, vfs_sweep
from ntxsim.workload import load_network, network_memory_footprint

g = load_network("googlenet")
p, a, bs1 = network_memory_footprint(g, "train_bs1")
print(f"GoogLeNet: {p:.1f} MB parameters, {a:.1f} MB activations, {bs1:.1f} MB to train at batch 1")

for cfg in ("ntx16-28nm", "ntx64-28nm"):
    arch = load_config(cfg)
    for mode in ("train", "inference"):
        m = network_metrics(g, arch, mode)
        print(f"{cfg:11s} {mode:9s} {m.time * 1e3:6.2f} ms  {m.power:5.1f} W  {m.efficiency / 1e9:5.1f} GFLOP/s/W"
              f"  peak {m.peak_bandwidth / 1e9:5.1f} GB/s")

# The slowest layers of a training step on 64 clusters.
m = network_metrics(g, load_config("ntx64-28nm"))
for r in sorted(m.layers, key=lambda r: -r.time)[:5]:
    print(f"  {r.name:24s} {r.pass_:9s} {r.time * 1e6:7.1f} us {r.bandwidth / 1e9:6.1f} GB/s")

# Efficiency-optimal frequency per configuration, geometric mean over six networks.
nets = [load_network(n) for n in ("alexnet", "googlenet", "inception_v3", "resnet34", "resnet50", "resnet152")]
for cfg in CONFIGS:
    arch = load_config(cfg)
    _, best = vfs_sweep(arch, frequency_grid(arch.node), nets)
    print(f"{cfg:12s} f* {best.freq / 1e9:4.2f} GHz  V {best.volt:.2f}  {best.metrics.efficiency / 1e9:5.1f} GFLOP/s/W"
          f"  {best.metrics.power:5.1f} W")
