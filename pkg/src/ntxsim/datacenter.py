"""Replacing a GPU server's accelerators with memory cubes: power and cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

HOURS_PER_YEAR = 8760


@dataclass(frozen=True)
class ServerBaseline:
    total_power: float = 3200.0  # W
    gpu_power: float = 2400.0  # W
    gpu_peak: float = 84.8  # TFLOP/s
    dram_gb: float = 512.0
    dram_w_per_16gb: float = 6.0
    dram_savings: float | None = 128.0  # W freed by dropping system DRAM; None derives it from capacity
    pue_factor: float = 1.12  # overhead applied to saved power
    price: float = 0.1104  # $ per kWh

    def __post_init__(self):
        if not 0 < self.gpu_power < self.total_power:
            raise ValueError("GPU power must be positive and below total power")
        if self.pue_factor < 1:
            raise ValueError("PUE factor must be at least 1")
        if self.gpu_peak <= 0 or self.price < 0:
            raise ValueError("GPU peak must be positive and price non-negative")

    @property
    def dram_power(self) -> float:
        """System DRAM power from capacity."""
        return self.dram_gb / 16 * self.dram_w_per_16gb

    @property
    def freed_dram_power(self) -> float:
        return self.dram_power if self.dram_savings is None else self.dram_savings


@dataclass(frozen=True)
class CubeOffer:
    peak: float  # TFLOP/s per cube
    power: float  # W per cube
    dram_gb: float = 8.0

    def __post_init__(self):
        if min(self.peak, self.power, self.dram_gb) <= 0:
            raise ValueError("cube peak, power and capacity must be positive")


@dataclass(frozen=True)
class SameCompute:
    cubes: int
    cube_power: float
    reduction: float
    saved: float
    dollars_per_year: float


@dataclass(frozen=True)
class SameTdp:
    cubes: int
    tflops: float
    speedup: float


def yearly_cost(watts: float, b: ServerBaseline) -> float:
    """Electricity cost in $ of drawing ``watts`` all year, facility overhead included."""
    return watts * b.pue_factor * HOURS_PER_YEAR / 1000 * b.price


def same_compute(b: ServerBaseline, c: CubeOffer) -> SameCompute:
    """Match the GPUs' peak with the fewest cubes; they also replace the system DRAM."""
    n = math.ceil(b.gpu_peak / c.peak - 1e-12)
    cube_power = n * c.power
    saved = b.gpu_power + b.freed_dram_power - cube_power
    reduction = b.total_power / (b.total_power - saved)
    return SameCompute(n, cube_power, reduction, saved, yearly_cost(saved, b))


def same_tdp(b: ServerBaseline, c: CubeOffer, budget: float | None = None) -> SameTdp:
    """As many cubes as fit the GPUs' power budget."""
    budget = b.gpu_power if budget is None else budget
    if c.power > budget:
        raise ValueError(f"one cube ({c.power} W) exceeds the {budget} W budget")
    n = math.floor(budget / c.power + 1e-9)
    total = n * c.peak
    return SameTdp(n, total, total / b.gpu_peak)
