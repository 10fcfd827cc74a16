"""The ten end-to-end acceptance criteria, each at its stated tolerance.

Every test records one pass/fail line; the lines are printed together at the
end of the run (see ``conftest.py``) and inline when run with ``-s``.
"""

import numpy as np
import pytest

from ntxsim.cli import OFFLOAD_LAYERS
from ntxsim.datacenter import CubeOffer, ServerBaseline, same_compute, same_tdp
from ntxsim.kernels import conv, oracle
from ntxsim.mesh import MeshConfig, mesh_energy, mesh_time
from ntxsim.perf import (ArchConfig, frequency_grid, kernel_timing, load_config, network_metrics, offload_counts,
                         vfs_sweep)
from ntxsim.verify import run_suites
from ntxsim.workload import LayerWorkload, load_network, network_memory_footprint

SIX = ("alexnet", "googlenet", "inception_v3", "resnet34", "resnet50", "resnet152")


def close(got, ref, rel=None, abs_=None):
    tol = abs_ if abs_ is not None else rel * abs(ref)
    return abs(got - ref) <= tol


@pytest.fixture
def report(request, acceptance_lines):
    """Record and print the verdict of one criterion."""
    def _report(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        acceptance_lines[n] = line
        print(line)
        return ok
    return _report


def test_c01_offload_table(report):
    published = [(802816, 64, 147, 1843968), (602112, 192, 576, 1806336), (50176, 64, 256, 200704),
                 (37632, 192, 512, 100352)]
    got = []
    for _, _, spec in OFFLOAD_LAYERS:
        ns, ntx = offload_counts(spec, "NS"), offload_counts(spec, "NTX")
        got.append((ns.offloads, ntx.offloads, ns.cycles, ntx.cycles))
    ok = got == published
    assert report(1, ok, f"offload rows {got}")


def test_c02_functional_correctness(report, seed):
    results = {r.name: r for r in run_suites(seed, cases=500)}
    ok = all(r.ok for r in results.values()) and results["oracle"].total == 500 and results["decomposition"].total == 20
    detail = ", ".join(f"{r.name} {r.passed}/{r.total}" for r in results.values())
    assert report(2, ok, detail), [f for r in results.values() for f in r.failures[:5]]


def test_c03_accumulator_precision(report, rng):
    x = rng.standard_normal((64, 10, 10)).astype(np.float32)
    w = rng.standard_normal((8, 64, 3, 3)).astype(np.float32)
    ref = oracle.conv2d_f64(x, w)
    y, _ = conv.conv_forward(x, w)
    seq = oracle.conv2d_f32_sequential(x, w)
    err_ntx = float(np.max(np.abs(y - ref) / np.abs(ref)))
    err_seq = float(np.max(np.abs(seq - ref) / np.abs(ref)))
    ok = err_ntx <= 2.0 ** -23 and err_ntx <= err_seq
    assert report(3, ok, f"max rel err NTX {err_ntx:.3g} vs float32 sequential {err_seq:.3g} (bound {2 ** -23:.3g})")


def test_c04_memory_footprints(report):
    published = {"alexnet": (232.5, 6.0, 238.5, 471.0), "googlenet": (26.7, 46.5, 73.2, 99.8),
                 "inception_v3": (90.8, 99.2, 190.0, 280.8), "resnet34": (176.2, 28.3, 204.5, 380.6),
                 "resnet50": (174.6, 67.1, 241.7, 416.3), "resnet152": (306.4, 154.4, 460.7, 767.1)}
    worst, identity = 0.0, True
    for name, ref in published.items():
        n = load_network(name)
        p, a, bs1 = network_memory_footprint(n, "train_bs1")
        bsn = network_memory_footprint(n, "train_bsN")[2]
        identity &= bsn - bs1 == p
        worst = max(worst, *(abs(g - r) / r for g, r in zip((p, a, bs1, bsn), ref)))
    ok = worst <= 0.05 and identity
    assert report(4, ok, f"worst deviation {worst:.2%} (tol 5%), BS>1 - BS=1 = params: {identity}")


def test_c05_ns_comparison(report):
    g = load_network("googlenet")
    rows = [("ntx16-28nm", "train", 34.8, 21.0), ("ntx64-28nm", "train", 8.69, 38.3),
            ("ntx16-28nm", "inference", 11.3, None), ("ntx64-28nm", "inference", 2.83, None)]
    ok, parts = True, []
    for cfg, mode, t_ref, eff_ref in rows:
        m = network_metrics(g, load_config(cfg), mode)
        t = m.time * 1e3
        ok &= close(t, t_ref, 0.15)
        parts.append(f"{cfg} {mode} {t:.2f} ms")
        if eff_ref is not None:
            ok &= close(m.efficiency / 1e9, eff_ref, 0.15)
            parts[-1] += f" / {m.efficiency / 1e9:.1f}"
    assert report(5, ok, "; ".join(parts) + " (tol 15%)")


def test_c06_mesh(report):
    t16, e16 = mesh_time(MeshConfig(16), 8192), mesh_energy(MeshConfig(16), 8192)
    t8, e8 = mesh_time(MeshConfig(8), 8192), mesh_energy(MeshConfig(8), 8192)
    t12, e12 = mesh_time(MeshConfig(12), 8192), mesh_energy(MeshConfig(12), 8192)
    checks = [
        close(t16.t_pass, 5.20e-3, 0.005), close(t16.t_update, 20.8e-3, 0.005),
        close(t8.speedup, 62.8, 0.01), close(t12.speedup, 138, 0.01),
        close(e8.energy_eff, 0.943, abs_=0.003), close(e12.energy_eff, 0.881, abs_=0.003),
        close(e16.e_pass, 0.1509, 0.005), close(e16.e_pwrud, 0.800, 0.005), close(e16.e_update, 1.403, 0.005),
    ]
    detail = (f"T_pass {t16.t_pass * 1e3:.3f} ms, T_update {t16.t_update * 1e3:.2f} ms, speedups {t8.speedup:.2f}/"
              f"{t12.speedup:.1f}, energy eff {e8.energy_eff:.2%}/{e12.energy_eff:.2%}, E_pass {e16.e_pass * 1e3:.1f} mJ,"
              f" E_update {e16.e_update:.3f} J")
    assert report(6, all(checks), detail)


def test_c07_datacenter(report):
    b = ServerBaseline(pue_factor=1.12)
    sc = same_compute(b, CubeOffer(2.007, 20.0))
    st = same_tdp(b, CubeOffer(2.007, 2400 / 129))
    ok = (sc.cubes == 43 and sc.cube_power == 860 and round(sc.reduction, 1) == 2.1
          and close(sc.dollars_per_year, 1808, abs_=5)
          and st.cubes == 129 and round(st.tflops, 1) == 258.9 and round(st.speedup, 1) == 3.1)
    detail = (f"same-compute {sc.cubes} cubes, {sc.cube_power:.0f} W, {sc.reduction:.2f}x, ${sc.dollars_per_year:.1f}"
              f"/yr; same-TDP {st.cubes} cubes, {st.tflops:.1f} TFLOP/s, {st.speedup:.2f}x")
    assert report(7, ok, detail)


VFS_TABLE = {"ntx16-28nm": 2.30, "ntx32-28nm": 1.70, "ntx64-28nm": 1.30, "ntx16-14nm": 3.08, "ntx32-14nm": 2.24,
             "ntx64-14nm": 1.68, "ntx128-14nm": 0.98, "ntx256-14nm": 0.56, "ntx512-14nm": 0.28}


def test_c08_vfs(report):
    nets = [load_network(n) for n in SIX]
    best = {}
    for name in VFS_TABLE:
        a = load_config(name)
        best[name] = vfs_sweep(a, frequency_grid(a.node), nets)[1]
    power_ok = all(b.metrics.power <= 25 for b in best.values())
    order_ok = True
    for node in ("28nm", "14nm"):
        fs = [best[n].freq for n in VFS_TABLE if n.endswith(node)]
        order_ok &= all(x >= y for x, y in zip(fs, fs[1:]))
    off = {n: best[n].freq / 1e9 / f - 1 for n, f in VFS_TABLE.items()}
    freq_ok = all(abs(d) <= 0.25 for d in off.values())
    geo = best["ntx64-14nm"].metrics.efficiency / 1e9
    geo_ok = close(geo, 54.9, 0.15)
    misses = ", ".join(f"{n} {best[n].freq / 1e9:.2f} vs {VFS_TABLE[n]:.2f} GHz ({d:+.0%})"
                       for n, d in off.items() if abs(d) > 0.25)
    detail = (f"P<=25W {power_ok}, monotone {order_ok}, freq within 25% {freq_ok}"
              f"{' [' + misses + ']' if misses else ''}, ntx64-14nm geomean {geo:.1f} (ref 54.9)")
    assert report(8, power_ok and order_ok and freq_ok and geo_ok, detail)


def test_c09_burst_behaviour(report):
    _, tr = conv.lower_forward(conv.reference_tile_spec(), tile_rows=conv.REFERENCE_TILE_ROWS).run(timing=True)
    frac = tr.burst_fraction(32)
    assert report(9, frac >= 0.90, f"{frac:.1%} of DMA bytes in bursts >= 32 B (need 90%)")


TOY_KERNELS = [
    (conv.ConvSpec(16, 12, 16, 8, 3, 3), 2),
    (conv.ConvSpec(8, 14, 14, 16, 5, 5, pad=2), 2),
    (conv.ConvSpec(32, 10, 10, 8, 1, 1), None),
]


def test_c10_model_matches_simulation(report):
    parts, ok = [], True
    for spec, rows in TOY_KERNELS:
        _, tr = conv.lower_forward(spec, tile_rows=rows).run(timing=True)
        seq = tr.head_tail_bytes
        w = LayerWorkload(tr.ntx_iterations, d_head=seq // 2, d_par=tr.dma_bytes - seq, d_tail=seq - seq // 2)
        # One cluster; the simulator counts one clock for NTX and DMA alike.
        a = ArchConfig(clusters=1, freq=1.0, dma_clock_ratio=1.0)
        t = kernel_timing(w, a, eta_c=tr.eta_c, eta_d=tr.eta_d).t_cl
        err = t / tr.cycles - 1
        ok &= abs(err) <= 0.05
        parts.append(f"{spec.c_in}x{spec.h}x{spec.w}->{spec.c_out} k{spec.uh}: model {t:.0f} vs sim {tr.cycles} "
                     f"({err:+.1%})")
    assert report(10, ok, "; ".join(parts))
