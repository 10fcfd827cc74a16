"""Data-parallel training on an N x N mesh of cubes.

Every cube trains on its share of a batch, then the weight updates are
averaged by four pipelined waves over the mesh (one per direction), each
streaming the full update across N hops.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

AVERAGING_TIME = 104e-6  # s; in-mesh averaging compute, dominated by the link transfer and not modelled


@dataclass(frozen=True)
class MeshConfig:
    n: int = 16
    link_bw: float = 61.44e9  # bytes/s: 16 lanes at 30.72 Gbit/s
    t_lat: float = 20e-6  # s per hop
    weight_bytes: float = 300e6
    p_cube: float = 21.0  # W
    p_link: float = 8.0  # W
    t_step_img: float = 8.69e-3  # s per image on one cube
    power_cycle: float = 50e-3  # s to power a link down or up

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("mesh side must be at least 1")
        if min(self.link_bw, self.weight_bytes, self.p_cube, self.t_step_img) <= 0:
            raise ValueError("bandwidth, weight size, cube power and step time must be positive")
        if min(self.t_lat, self.p_link, self.power_cycle) < 0:
            raise ValueError("latency, link power and power-cycle time must be non-negative")

    @property
    def cubes(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class MeshTime:
    t_tx: float
    t_pass: float
    t_update: float
    t_step: float
    t_total: float
    speedup: float
    parallel_eff: float


@dataclass(frozen=True)
class MeshEnergy:
    e_pass: float
    e_pwrud: float
    e_update: float
    e_step_total: float
    e_total: float
    energy_eff: float


def _check_batch(m: MeshConfig, batch: int) -> None:
    if batch < 1:
        raise ValueError("batch must be positive")
    if batch < m.cubes:
        warnings.warn(f"batch {batch} leaves cubes of the {m.n}x{m.n} mesh idle", RuntimeWarning, stacklevel=3)


def mesh_time(m: MeshConfig, batch: int, t_update: float | None = None) -> MeshTime:
    """Step timing; ``t_update`` overrides the four-wave update time."""
    _check_batch(m, batch)
    t_tx = m.weight_bytes / m.link_bw
    t_pass = t_tx + m.n * m.t_lat
    t_upd = 4 * t_pass if t_update is None else t_update
    t_step = m.t_step_img * batch / m.cubes
    t_total = t_upd + t_step
    speedup = m.t_step_img * batch / t_total
    return MeshTime(t_tx, t_pass, t_upd, t_step, t_total, speedup, speedup / m.cubes)


def mesh_energy(m: MeshConfig, batch: int, include_update: bool = True) -> MeshEnergy:
    """Energy of one step; each cube's update costs four passes plus a link power cycle."""
    t = mesh_time(m, batch)
    e_pass = t.t_pass * (m.p_cube + m.p_link)
    e_pwrud = 2 * m.p_link * m.power_cycle
    e_update = 4 * e_pass + e_pwrud if include_update else 0.0
    e_step_total = t.t_step * m.p_cube * m.cubes
    e_total = e_step_total + m.cubes * e_update
    eff = m.t_step_img * batch * m.p_cube / e_total
    return MeshEnergy(e_pass, e_pwrud, e_update, e_step_total, e_total, eff)


def mesh_grid(sides=range(1, 17), batches=(256, 512, 1024, 2048, 4096, 8192), m: MeshConfig | None = None):
    """Rows (N, L_B, speedup, parallel_eff, energy_eff) over a grid, skipping batches below N*N."""
    base = m or MeshConfig()
    rows = []
    for n in sides:
        cfg = MeshConfig(n, base.link_bw, base.t_lat, base.weight_bytes, base.p_cube, base.p_link, base.t_step_img,
                         base.power_cycle)
        for b in batches:
            if b < cfg.cubes:
                continue
            t = mesh_time(cfg, b)
            e = mesh_energy(cfg, b)
            rows.append((n, b, t.speedup, t.parallel_eff, e.energy_eff))
    return rows
