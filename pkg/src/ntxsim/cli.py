"""``ntxsim`` command line: verification runs, model evaluation, sweeps and reports.

Grids are written as CSV, scalar reports as JSON; ``--format`` overrides.
Exit status is 0 on success, 1 when a check or golden comparison fails and
2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import DEFAULT_SEED, SEED_ENV
from .datacenter import CubeOffer, ServerBaseline, same_compute, same_tdp
from .kernels.conv import REFERENCE_TILE_ROWS, ConvSpec, lower_forward, reference_tile_spec
from .mesh import MeshConfig, mesh_grid
from .perf import (CONFIGS, ModelError, dram_power, frequency_grid, load_config, network_metrics, offload_counts,
                   vfs_sweep)
from .verify import SUITES, run_suites
from .workload import NETWORKS, NetworkSpec, WorkloadError, load_network

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# Pinned execution times (ms) and training efficiencies (GFLOP/s/W) for GoogLeNet.
GOLDEN_MODEL = {
    ("ntx16-28nm", "train"): {"time_ms": 34.8, "efficiency": 21.0},
    ("ntx64-28nm", "train"): {"time_ms": 8.69, "efficiency": 38.3},
    ("ntx16-28nm", "inference"): {"time_ms": 11.3},
    ("ntx64-28nm", "inference"): {"time_ms": 2.83},
}
GOLDEN_RTOL = 0.15

# The four GoogLeNet-style layers of the offload comparison: (kernel label, output label, layer).
OFFLOAD_LAYERS = (
    ("7x7x3", "112x112x64", ConvSpec(3, 229, 229, 64, 7, 7, stride=2)),
    ("3x3x64", "56x56x192", ConvSpec(64, 56, 56, 192, 3, 3, pad=1)),
    ("1x1x256", "28x28x64", ConvSpec(256, 28, 28, 64, 1, 1)),
    ("1x1x512", "14x14x192", ConvSpec(512, 14, 14, 192, 1, 1)),
)

# Shipped cube offers. Power differs by scenario: the same-TDP case divides the GPU budget evenly.
CUBE_OFFERS = {
    "ntx128": {"peak": 2.007, "power": {"same-compute": 20.0, "same-tdp": 2400.0 / 129}, "dram_gb": 8.0},
}


class UsageError(Exception):
    pass


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return DEFAULT_SEED if args.seed is None else args.seed


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _table(header, rows, fmt: str) -> str:
    if fmt == "json":
        return _json([dict(zip(header, r)) for r in rows])
    return _csv(header, rows)


def _g(x: float, digits: int = 6) -> float:
    """Round for stable text output."""
    return float(f"{x:.{digits}g}")


def _network(name: str) -> NetworkSpec:
    try:
        return load_network(name)
    except (FileNotFoundError, WorkloadError) as e:
        msg = str(e)
        raise UsageError(msg if "available" in msg else f"{msg}; available: {', '.join(NETWORKS)}") from None


def _config(name: str):
    try:
        return load_config(name)
    except (FileNotFoundError, ModelError, TypeError, json.JSONDecodeError) as e:
        msg = str(e)
        raise UsageError(msg if "available" in msg else f"{msg}; available: {', '.join(CONFIGS)}") from None


# ---------------------------------------------------------------- commands


def cmd_verify(args) -> tuple[str, int]:
    if args.cases < 1:
        raise UsageError("--cases must be positive")
    seed = _seed(args)
    results = run_suites(seed, args.cases, fault=args.inject_fault)
    ok = all(r.ok for r in results)
    if args.format == "csv":
        text = _csv(["suite", "passed", "total", "status"],
                    [(r.name, r.passed, r.total, "pass" if r.ok else "FAIL") for r in results])
    else:
        text = _json({"seed": seed, "cases": args.cases, "status": "pass" if ok else "fail",
                      "suites": [{"name": r.name, "passed": r.passed, "total": r.total,
                                  "failures": r.failures[:20]} for r in results]})
    return text, EXIT_OK if ok else EXIT_FAIL


def cmd_model(args) -> tuple[str, int]:
    net = _network(args.network)
    arch = _config(args.config)
    m = network_metrics(net, arch, args.pass_)
    header = ["layer", "kind", "pass", "time_ms", "bandwidth_gbps", "power_w", "efficiency_gflops_w"]
    rows = []
    for r in m.layers:
        p = m.cluster_power + dram_power(r.bandwidth, arch.node)
        eff = r.flops / (p * r.time) / 1e9 if r.time > 0 else 0.0
        rows.append((r.name, r.kind, r.pass_, _g(r.time * 1e3), _g(r.bandwidth / 1e9), _g(p), _g(eff)))
    total = {"time_ms": _g(m.time * 1e3), "avg_bandwidth_gbps": _g(m.avg_bandwidth / 1e9),
             "peak_bandwidth_gbps": _g(m.peak_bandwidth / 1e9), "power_w": _g(m.power),
             "efficiency": _g(m.efficiency / 1e9), "gflop": _g(m.flops / 1e9), "throttle": _g(m.throttle)}
    status = EXIT_OK
    golden = None
    if args.golden:
        pinned = GOLDEN_MODEL.get((arch.name, args.pass_)) if net.name == "googlenet" else None
        if pinned is None:
            raise UsageError(f"no pinned values for {net.name} on {arch.name} ({args.pass_})")
        golden = []
        for key, ref in pinned.items():
            got = total[key]
            ok = abs(got - ref) <= GOLDEN_RTOL * abs(ref)
            golden.append({"quantity": key, "model": got, "reference": ref, "rel_tol": GOLDEN_RTOL,
                           "rel_err": _g((got - ref) / ref, 4), "status": "pass" if ok else "fail"})
            status = status if ok else EXIT_FAIL
    if args.format == "json":
        doc = {"network": net.name, "config": arch.name, "pass": args.pass_, "total": total,
               "layers": [dict(zip(header, r)) for r in rows]}
        if golden is not None:
            doc["golden"] = golden
        return _json(doc), status
    text = _csv(header, rows + [("TOTAL", "", args.pass_, total["time_ms"], total["avg_bandwidth_gbps"],
                                 total["power_w"], total["efficiency"])])
    if golden is not None:
        text += _csv(["quantity", "model", "reference", "rel_tol", "rel_err", "status"],
                     [tuple(g.values()) for g in golden])
    return text, status


def cmd_offloads(args) -> tuple[str, int]:
    header = ["kernel", "output", "ns_offloads", "ntx_offloads", "ns_cycles", "ntx_cycles"]
    rows = []
    for kernel, output, spec in OFFLOAD_LAYERS:
        ns, ntx = offload_counts(spec, "NS"), offload_counts(spec, "NTX")
        rows.append((kernel, output, ns.offloads, ntx.offloads, ns.cycles, ntx.cycles))
    return _table(header, rows, args.format), EXIT_OK


def cmd_sweep(args) -> tuple[str, int]:
    arch = _config(args.config)
    nets = [_network(n) for n in args.networks.split(",")]
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    pts, best = vfs_sweep(arch, frequency_grid(arch.node, args.steps), nets, args.mode)
    header = ["freq_ghz", "volt", "e_cycle_pj", "time_ms", "power_w", "efficiency_gflops_w", "optimum"]
    rows = [(_g(p.freq / 1e9), _g(p.volt), _g(p.e_cycle * 1e12), _g(p.metrics.time * 1e3), _g(p.metrics.power),
             _g(p.metrics.efficiency / 1e9), int(p is best)) for p in pts]
    return _table(header, rows, args.format), EXIT_OK


def cmd_mesh(args) -> tuple[str, int]:
    try:
        sides = [int(s) for s in args.sides.split(",")] if "," in args.sides else \
            list(range(int(args.sides.split("-")[0]), int(args.sides.split("-")[-1]) + 1))
        batches = [int(b) for b in args.batches.split(",")]
    except ValueError:
        raise UsageError("--sides takes 'a-b' or a comma list, --batches a comma list") from None
    rows = [(n, b, _g(s), _g(pe), _g(ee)) for n, b, s, pe, ee in mesh_grid(sides, batches, MeshConfig())]
    return _table(["N", "L_B", "speedup", "parallel_eff", "energy_eff"], rows, args.format), EXIT_OK


def _cube_offer(spec: str, scenario: str) -> CubeOffer:
    if spec in CUBE_OFFERS:
        doc = CUBE_OFFERS[spec]
    else:
        p = Path(spec)
        if not p.exists():
            raise UsageError(f"unknown cube config {spec!r}; builtin: {', '.join(CUBE_OFFERS)}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{spec}: {e}") from None
    power = doc.get("power")
    if isinstance(power, dict):
        power = power.get(scenario)
    try:
        return CubeOffer(float(doc["peak"]), float(power), float(doc.get("dram_gb", 8.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"bad cube config {spec!r}: {e}") from None


def cmd_datacenter(args) -> tuple[str, int]:
    offer = _cube_offer(args.cube_config, args.scenario)
    base = ServerBaseline(pue_factor=args.pue_factor, price=args.price,
                          dram_savings=None if args.dram_from_capacity else 128.0)
    doc = {"scenario": args.scenario, "cube": {"peak_tflops": offer.peak, "power_w": _g(offer.power)},
           "pue_factor": base.pue_factor, "price_per_kwh": base.price}
    if args.scenario == "same-compute":
        r = same_compute(base, offer)
        doc.update(n=r.cubes, cube_power_w=_g(r.cube_power), reduction=_g(r.reduction, 4), saved_w=_g(r.saved),
                   dram_savings_w=base.freed_dram_power, dollars_per_year=round(r.dollars_per_year, 2))
    else:
        try:
            r = same_tdp(base, offer, args.budget)
        except ValueError as e:
            raise UsageError(str(e)) from None
        doc.update(n=r.cubes, tflops=_g(r.tflops, 5), speedup=_g(r.speedup, 4),
                   budget_w=base.gpu_power if args.budget is None else args.budget)
    if args.format == "csv":
        flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        return _csv(list(flat), [list(flat.values())]), EXIT_OK
    return _json(doc), EXIT_OK


def cmd_trace(args) -> tuple[str, int]:
    spec = reference_tile_spec()
    _, tr = lower_forward(spec, tile_rows=REFERENCE_TILE_ROWS).run(timing=True)
    if args.histogram:
        Path(args.histogram).write_text(tr.histogram_csv())
    summary = {"cycles": tr.cycles, "burst_fraction_ge_32B": _g(tr.burst_fraction(32), 4),
               "eta_c": _g(tr.eta_c, 4), "eta_d": _g(tr.eta_d, 4), "dma_bytes": tr.dma_bytes,
               "busy": {u: _g(tr.busy_fraction(u), 4) for u in sorted(tr.busy)}}
    if args.format == "json":
        return _json(summary), EXIT_OK
    return tr.trace_csv(), EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntxsim", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help=f"seed for randomized checks ({SEED_ENV} overrides)")
    p.add_argument("-o", "--output", help="write to this file instead of stdout")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, fmt, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--format", choices=("csv", "json"), default=fmt)
        sp.set_defaults(func=func)
        return sp

    v = add("verify", cmd_verify, "json", "run the randomized kernel checks")
    v.add_argument("--cases", type=int, default=500)
    v.add_argument("--inject-fault", choices=SUITES, default=None, help=argparse.SUPPRESS)

    m = add("model", cmd_model, "csv", "per-layer time, bandwidth, power and efficiency")
    m.add_argument("--network", default="googlenet", help="network name or JSON path")
    m.add_argument("--config", default="ntx64-28nm", help="architecture name or JSON path")
    m.add_argument("--pass", dest="pass_", choices=("train", "inference"), default="train")
    m.add_argument("--golden", action="store_true", help="compare totals with pinned reference rows")

    add("offloads", cmd_offloads, "csv", "command counts of a MAC unit versus the loop engine")

    s = add("sweep", cmd_sweep, "csv", "efficiency versus operating frequency")
    s.add_argument("--config", default="ntx64-28nm")
    s.add_argument("--networks", default=",".join(n for n in NETWORKS if n != "lstm512"))
    s.add_argument("--mode", choices=("train", "inference"), default="train")
    s.add_argument("--steps", type=int, default=841)

    me = add("mesh", cmd_mesh, "csv", "data-parallel scaling over a cube mesh")
    me.add_argument("--sides", default="1-16")
    me.add_argument("--batches", default="256,512,1024,2048,4096,8192")

    d = add("datacenter", cmd_datacenter, "json", "server replacement scenarios")
    d.add_argument("--scenario", choices=("same-compute", "same-tdp"), required=True)
    d.add_argument("--cube-config", default="ntx128", help="builtin offer name or JSON file")
    d.add_argument("--pue-factor", type=float, default=1.12)
    d.add_argument("--price", type=float, default=0.1104, help="$ per kWh")
    d.add_argument("--budget", type=float, default=None, help="W available for cubes (same-tdp)")
    d.add_argument("--dram-from-capacity", action="store_true", help="derive freed DRAM power from capacity")

    t = add("trace", cmd_trace, "csv", "cycle trace of the reference 3x3 convolution tile")
    t.add_argument("--histogram", help="also write the burst-length histogram CSV here")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        text, status = args.func(args)
    except UsageError as e:
        print(f"ntxsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ValueError) as e:
        print(f"ntxsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
