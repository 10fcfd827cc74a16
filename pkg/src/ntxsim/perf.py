"""Analytical timing, bandwidth, power and efficiency of a cube of clusters.

Frequencies are NTX clocks. The NTX compute ``r_c`` MACs per NTX cycle per
cluster; the DMA engine moves ``r_d`` bytes per cluster cycle, and the
cluster clock runs at ``dma_clock_ratio`` times the NTX clock.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .workload import LayerWorkload, NetworkSpec, network_workloads


class ModelError(ValueError):
    """Invalid architecture parameters or operating point."""


@dataclass(frozen=True)
class Node:
    name: str
    f_min: float  # Hz
    f_max: float
    dram_factor: float  # multiplies DRAM power
    speed: float = 1.0  # frequency scale relative to 28 nm
    energy: float = 1.0  # per-cycle energy scale relative to 28 nm
    area: float = 1.0  # area scale relative to 28 nm


NODES = {
    "28nm": Node("28nm", 0.1e9, 2.5e9, 1.0),
    "14nm": Node("14nm", 0.14e9, 3.5e9, 0.87, speed=1.4, energy=0.7, area=0.4),
}

# Cluster area at 28 nm: a fixed part plus a per-cluster part, fitted to the
# 16- and 64-cluster designs (10.5 and 41.0 mm^2).
AREA_BASE_MM2 = 10.5 - 16 * (41.0 - 10.5) / 48
AREA_PER_CLUSTER_MM2 = (41.0 - 10.5) / 48
V_MIN, V_MAX, V_NOM = 0.6, 1.2, 1.0
DRAM_STATIC_W = 7.9
DRAM_W_PER_GBPS = 0.0215


@dataclass(frozen=True)
class ArchConfig:
    name: str = "ntx64-28nm"
    clusters: int = 64
    ntx_per_cluster: int = 8
    r_c: float = 8.0  # MAC per NTX cycle per cluster
    r_d: float = 4.0  # bytes per cluster cycle
    freq: float = 1.5e9  # NTX clock, Hz
    dma_clock_ratio: float = 0.5
    eta_c: float = 0.84
    eta_d: float = 0.87
    node: str = "28nm"
    e_cycle: float = 165e-12  # cluster energy per NTX cycle at V_NOM, J
    b_max: float = 320e9  # bytes/s

    def __post_init__(self):
        if self.node not in NODES:
            raise ModelError(f"unknown node {self.node!r}; choose from {sorted(NODES)}")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ModelError("efficiencies must lie in (0, 1]")
        if self.clusters < 1 or self.ntx_per_cluster < 1:
            raise ModelError("need at least one cluster and one NTX")
        if min(self.r_c, self.r_d, self.dma_clock_ratio, self.e_cycle, self.b_max) <= 0:
            raise ModelError("rates, energy and bandwidth cap must be positive")

    @property
    def tech(self) -> Node:
        return NODES[self.node]

    @property
    def peak_flops(self) -> float:
        return 2 * self.clusters * self.r_c * self.freq

    @property
    def area_mm2(self) -> float:
        return self.tech.area * (AREA_BASE_MM2 + AREA_PER_CLUSTER_MM2 * self.clusters)

    def at(self, freq: float) -> "ArchConfig":
        return replace(self, freq=freq)

    @classmethod
    def from_dict(cls, doc: dict) -> "ArchConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ModelError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)


CONFIGS = ("ntx16-28nm", "ntx32-28nm", "ntx64-28nm",
           "ntx16-14nm", "ntx32-14nm", "ntx64-14nm", "ntx128-14nm", "ntx256-14nm", "ntx512-14nm")


def load_config(name_or_path) -> ArchConfig:
    """Load a shipped configuration by name, or a JSON file by path."""
    p = Path(str(name_or_path))
    if p.suffix == ".json" or p.exists():
        text = p.read_text()
    elif name_or_path in CONFIGS:
        text = resources.files("ntxsim").joinpath("configs", f"{name_or_path}.json").read_text()
    else:
        raise ModelError(f"unknown config {name_or_path!r}; available: {', '.join(CONFIGS)}")
    return ArchConfig.from_dict(json.loads(text))


@dataclass(frozen=True)
class KernelTiming:
    t_c: float
    t_dpar: float
    t_dseq: float
    t_cl: float
    b_cl: float
    p_cl: float


def kernel_timing(w: LayerWorkload, a: ArchConfig, e_cycle: float | None = None, eta_c: float | None = None,
                  eta_d: float | None = None) -> KernelTiming:
    """Time of ``w`` on one cluster with compute overlapping parallel DMA."""
    if a.freq <= 0:
        raise ModelError("frequency must be positive")
    eta_c = a.eta_c if eta_c is None else eta_c
    eta_d = a.eta_d if eta_d is None else eta_d
    dma_rate = eta_d * a.r_d * a.freq * a.dma_clock_ratio
    t_c = w.n_c / (eta_c * a.r_c * a.freq)
    t_dpar = w.d_par / dma_rate
    t_dseq = (w.d_head + w.d_tail) / dma_rate
    t_cl = max(t_c, t_dpar) + t_dseq
    b_cl = w.d_dma / t_cl if t_cl > 0 else 0.0
    return KernelTiming(t_c, t_dpar, t_dseq, t_cl, b_cl, (a.e_cycle if e_cycle is None else e_cycle) * a.freq)


def dram_power(bandwidth: float, node: str = "28nm") -> float:
    """Cube DRAM power in W for an internal bandwidth in bytes/s."""
    if bandwidth < 0:
        raise ModelError("bandwidth must be non-negative")
    return (DRAM_STATIC_W + DRAM_W_PER_GBPS * bandwidth / 1e9) * NODES[node].dram_factor


@dataclass(frozen=True)
class CubeMetrics:
    bandwidth: float  # bytes/s
    time: float  # s
    power: float  # W
    efficiency: float  # FLOP/s/W
    flops: float = 0.0

    @property
    def gflops_per_w(self) -> float:
        return self.efficiency / 1e9


def _spread(w: LayerWorkload, a: ArchConfig, e_cycle: float | None, cap: bool = True):
    """(time, bandwidth) of ``w`` split over all clusters, throttled at b_max."""
    kt = kernel_timing(w, a, e_cycle)
    t = kt.t_cl / a.clusters
    b = a.clusters * kt.b_cl
    if cap and b > a.b_max:
        t *= b / a.b_max
        b = a.b_max
    return t, b


def cube_metrics(w: LayerWorkload, a: ArchConfig, e_cycle: float | None = None) -> CubeMetrics:
    """One workload parallelized over the cube's clusters."""
    t, b = _spread(w, a, e_cycle)
    e = a.e_cycle if e_cycle is None else e_cycle
    p = dram_power(b, a.node) + a.clusters * e * a.freq
    eff = w.flops / (p * t) if t > 0 else 0.0
    return CubeMetrics(b, t, p, eff, w.flops)


@dataclass(frozen=True)
class LayerResult:
    name: str
    kind: str
    pass_: str
    time: float
    bandwidth: float
    flops: int
    bytes: int


@dataclass(frozen=True)
class NetworkMetrics:
    """Totals of running layers one after another on the whole cube.

    Power is rated at the peak layer bandwidth, so ``power`` bounds the cube
    draw over the whole step.
    """

    time: float
    avg_bandwidth: float
    peak_bandwidth: float
    power: float
    cluster_power: float
    dram_power: float
    efficiency: float
    flops: int
    throttle: float = 1.0  # time stretch applied by the bandwidth cap
    layers: list = field(default_factory=list)

    def as_cube(self) -> CubeMetrics:
        return CubeMetrics(self.avg_bandwidth, self.time, self.power, self.efficiency, self.flops)


CAP_MODES = ("network", "layer")


@dataclass(frozen=True)
class WorkloadTable:
    """Column view of a list of (layer, pass, workload) triples."""

    labels: tuple  # (name, kind, pass)
    n_c: np.ndarray
    d_par: np.ndarray
    d_seq: np.ndarray
    flops: np.ndarray

    @classmethod
    def build(cls, triples) -> "WorkloadTable":
        rows = [(l, p, w) for l, p, w in triples if w.n_c or w.d_dma]
        col = lambda f: np.array([f(w) for _, _, w in rows], dtype=np.float64)  # noqa: E731
        return cls(tuple((l.name, l.kind, p) for l, p, _ in rows), col(lambda w: w.n_c), col(lambda w: w.d_par),
                   col(lambda w: w.d_head + w.d_tail), col(lambda w: w.flops))


def network_metrics(n: NetworkSpec | None, a: ArchConfig, mode: str = "train", e_cycle: float | None = None,
                    workloads=None, cap: str = "network", detail: bool = True) -> NetworkMetrics:
    """Per-layer and total metrics for one image (``train`` = forward + backward).

    With ``cap="network"`` the cube clock is throttled for the whole step once
    the most demanding layer would exceed b_max, which stretches every layer by
    the same factor. With ``cap="layer"`` only the offending layers stretch.
    ``workloads`` may be precomputed triples or a WorkloadTable.
    """
    if cap not in CAP_MODES:
        raise ModelError(f"cap must be one of {CAP_MODES}")
    if a.freq <= 0:
        raise ModelError("frequency must be positive")
    tab = workloads if isinstance(workloads, WorkloadTable) else \
        WorkloadTable.build(workloads if workloads is not None else network_workloads(n, mode))
    dma_rate = a.eta_d * a.r_d * a.freq * a.dma_clock_ratio
    t_cl = np.maximum(tab.n_c / (a.eta_c * a.r_c * a.freq), tab.d_par / dma_rate) + tab.d_seq / dma_rate
    nbytes = tab.d_par + tab.d_seq
    t = t_cl / a.clusters
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(t > 0, nbytes / t, 0.0)
    if cap == "layer":
        over = np.maximum(b / a.b_max, 1.0)
        t, b = t * over, b / over
    b_peak = float(b.max()) if b.size else 0.0
    stretch = max(b_peak / a.b_max, 1.0)
    t, b, b_peak = t * stretch, b / stretch, b_peak / stretch
    t_tot, flops = float(t.sum()), int(tab.flops.sum())
    e = a.e_cycle if e_cycle is None else e_cycle
    p_cl = a.clusters * e * a.freq
    p_dram = dram_power(b_peak, a.node)
    p = p_cl + p_dram
    eff = flops / (p * t_tot) if t_tot > 0 else 0.0
    rows = [LayerResult(name, kind, pass_, float(ti), float(bi), int(fl), int(nb))
            for (name, kind, pass_), ti, bi, fl, nb in zip(tab.labels, t, b, tab.flops, nbytes)] if detail else []
    return NetworkMetrics(t_tot, float(nbytes.sum()) / t_tot if t_tot else 0.0, b_peak, p, p_cl, p_dram, eff,
                          flops, stretch, rows)


@dataclass(frozen=True)
class OffloadCount:
    offloads: int
    cycles: int


def offload_counts(spec, arch: str) -> OffloadCount:
    """Commands a core issues for a forward convolution, and the work in each.

    A MAC-only co-processor needs one command per output pixel; a command of
    the five-level loop engine covers one whole output channel.
    """
    taps = spec.uh * spec.uw * spec.c_in
    pixels = spec.out_h * spec.out_w
    if arch.upper() == "NS":
        return OffloadCount(pixels * spec.c_out, taps)
    if arch.upper() == "NTX":
        return OffloadCount(spec.c_out, pixels * taps)
    raise ModelError(f"arch must be NS or NTX, got {arch!r}")


def tech_scale(a: ArchConfig, node: str = "14nm") -> ArchConfig:
    """Move a 28 nm design to ``node``: faster clock, cheaper cycles."""
    src, dst = a.tech, NODES[node]
    return replace(a, node=node, freq=a.freq * dst.speed / src.speed, e_cycle=a.e_cycle * dst.energy / src.energy,
                   name=a.name.replace(src.name, dst.name))


def voltage(f: float, node: str = "28nm") -> float:
    """Supply voltage, linear in frequency across the node's range."""
    t = NODES[node]
    if not t.f_min * (1 - 1e-9) <= f <= t.f_max * (1 + 1e-9):
        raise ModelError(f"{f / 1e9:.3f} GHz outside {t.f_min / 1e9:g}-{t.f_max / 1e9:g} GHz for {node}")
    return V_MIN + (V_MAX - V_MIN) * (f - t.f_min) / (t.f_max - t.f_min)


@dataclass(frozen=True)
class VfsPoint:
    freq: float
    volt: float
    e_cycle: float
    metrics: CubeMetrics


def frequency_grid(node: str = "28nm", steps: int = 841) -> list:
    t = NODES[node]
    return [t.f_min + (t.f_max - t.f_min) * i / (steps - 1) for i in range(steps)]


def vfs_point(a: ArchConfig, f: float, nets=(), mode: str = "train", workload: LayerWorkload | None = None,
              tables=None) -> VfsPoint:
    """Operating point at NTX clock ``f``; efficiency is the geometric mean over ``nets``."""
    v = voltage(f, a.node)
    e = a.e_cycle * (v / V_NOM) ** 2
    af = a.at(f)
    if workload is not None:
        return VfsPoint(f, v, e, cube_metrics(workload, af, e))
    tables = tables or [WorkloadTable.build(network_workloads(n, mode)) for n in nets]
    ms = [network_metrics(None, af, e_cycle=e, workloads=t, detail=False) for t in tables]
    if not ms:
        raise ModelError("need a workload or at least one network")
    k = len(ms)
    geo = lambda xs: math.exp(sum(math.log(x) for x in xs) / k)  # noqa: E731
    cm = CubeMetrics(geo([m.avg_bandwidth for m in ms]), geo([m.time for m in ms]), geo([m.power for m in ms]),
                     geo([m.efficiency for m in ms]), geo([m.flops for m in ms]))
    return VfsPoint(f, v, e, cm)


def vfs_sweep(a: ArchConfig, grid=None, nets=(), mode: str = "train", workload: LayerWorkload | None = None):
    """(points, optimum) where the optimum maximizes efficiency."""
    grid = list(grid) if grid is not None else frequency_grid(a.node)
    tables = None if workload is not None else [WorkloadTable.build(network_workloads(n, mode)) for n in nets]
    pts = [vfs_point(a, f, workload=workload, tables=tables) for f in grid]
    best = max(pts, key=lambda p: p.metrics.efficiency)
    return pts, best


def gpu_efficiency(time_per_image: float, tdp: float, flops_per_image: float) -> float:
    """FLOP/s/W of a device processing one image in ``time_per_image`` at ``tdp``."""
    if min(time_per_image, tdp, flops_per_image) <= 0:
        raise ModelError("time, TDP and FLOPs must be positive")
    return flops_per_image / time_per_image / tdp


def config_dict(a: ArchConfig) -> dict:
    return asdict(a)
