"""Single-core ECM composition and multicore scaling with a bus latency penalty.

All cycle counts are per *work unit* (typically one cache line worth of loop
iterations).  ``EcmContributions.work_per_unit`` says how many work items
(flops, iterations, ...) one unit stands for; performance values returned by
this module are in work items per second.

The memory-bound multicore path follows a recursive utilization rule: with
``n`` cores active, every core that finds the memory bus busy pays an extra
average latency proportional to ``(n - 1) * u(n - 1) * p0`` cycles, which
delays saturation relative to the plain (linear-until-the-roof) model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional


class NoMemoryTrafficError(ValueError):
    """Raised when a utilization is requested for a kernel with T_L3Mem == 0.

    Such kernels never touch the memory bus; they scale linearly and the
    utilization recursion is undefined for them.
    """


@dataclass(frozen=True)
class EcmContributions:
    """Cycle contributions of one work unit on a single core."""

    t_comp: float  # overlapping in-core execution
    t_reg_l1: float  # non-overlapping register <-> L1 transfers
    t_l1_l2: float
    t_l2_l3: float
    t_l3_mem: float
    work_per_unit: float = 1.0

    def __post_init__(self):
        for name in ("t_comp", "t_reg_l1", "t_l1_l2", "t_l2_l3", "t_l3_mem"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite value >= 0, got {value!r}")
        if not math.isfinite(self.work_per_unit) or self.work_per_unit <= 0:
            raise ValueError(f"work_per_unit must be > 0, got {self.work_per_unit!r}")
        if self.t_ecm <= 0:
            raise ValueError("kernel has no cycle contributions at all")

    @property
    def t_transfer(self) -> float:
        return self.t_reg_l1 + self.t_l1_l2 + self.t_l2_l3 + self.t_l3_mem

    @property
    def t_ecm(self) -> float:
        return compose_single_core(self)

    @property
    def t_chip(self) -> float:
        """Data delay up to and including the L3 cache."""
        return self.t_ecm - self.t_l3_mem

    def with_l3_mem(self, t_l3_mem: float) -> "EcmContributions":
        return replace(self, t_l3_mem=t_l3_mem)


@dataclass(frozen=True)
class ScalingParams:
    p0: float  # latency penalty coefficient [cy]
    n_cores: int  # cores sharing one memory interface
    pi_bw: float  # bandwidth-bound performance ceiling [work/s]
    f_core: float  # [GHz]

    def __post_init__(self):
        if not (self.p0 >= 0 and math.isfinite(self.p0)):
            raise ValueError(f"p0 must be >= 0, got {self.p0!r}")
        if self.n_cores < 1:
            raise ValueError(f"n_cores must be >= 1, got {self.n_cores!r}")
        if not self.pi_bw > 0:
            raise ValueError(f"pi_bw must be > 0, got {self.pi_bw!r}")
        if not self.f_core > 0:
            raise ValueError(f"f_core must be > 0, got {self.f_core!r}")


def compose_single_core(c: EcmContributions) -> float:
    """T_ECM: in-core work overlaps fully, all data transfers serialize."""
    return max(c.t_comp, c.t_reg_l1 + c.t_l1_l2 + c.t_l2_l3 + c.t_l3_mem)


def memory_cycles(bytes_per_unit: float, bandwidth_gbs: float, f_core: float) -> float:
    """Cycles per work unit spent on L3<->memory traffic at a given bandwidth."""
    if bandwidth_gbs <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth_gbs!r}")
    return bytes_per_unit * f_core / bandwidth_gbs


def bandwidth_ceiling(bytes_per_unit: float, bandwidth_gbs: float, work_per_unit: float) -> float:
    """Bandwidth-bound performance limit in work items per second."""
    return bandwidth_gbs * 1e9 / bytes_per_unit * work_per_unit


def single_core_performance(c: EcmContributions, f_core: float) -> float:
    """Plain single-core ECM prediction in work items per second."""
    return f_core * 1e9 * c.work_per_unit / compose_single_core(c)


def _check_utilization_args(n, t_ecm, t_l3mem, p0):
    if n < 1:
        raise ValueError(f"core count must be >= 1, got {n!r}")
    if t_l3mem == 0:
        raise NoMemoryTrafficError("T_L3Mem is zero: kernel has no memory traffic and scales linearly")
    if not (0 < t_l3mem <= t_ecm):
        raise ValueError(f"need 0 < T_L3Mem <= T_ECM, got T_L3Mem={t_l3mem!r}, T_ECM={t_ecm!r}")
    if p0 < 0:
        raise ValueError(f"p0 must be >= 0, got {p0!r}")


def utilization_series(n: int, t_ecm: float, t_l3mem: float, p0: float) -> List[float]:
    """Memory bus utilization for 1..n active cores, by forward iteration."""
    _check_utilization_args(n, t_ecm, t_l3mem, p0)
    series = []
    u_prev = 0.0
    for k in range(1, n + 1):
        u = min(1.0, k * t_l3mem / (t_ecm + (k - 1) * u_prev * p0))
        series.append(u)
        u_prev = u
    return series


def utilization(n: int, t_ecm: float, t_l3mem: float, p0: float) -> float:
    return utilization_series(n, t_ecm, t_l3mem, p0)[-1]


def plain_utilization(n: int, t_ecm: float, t_l3mem: float) -> float:
    """Utilization under the original linear-until-saturation assumption."""
    _check_utilization_args(n, t_ecm, t_l3mem, 0.0)
    return min(1.0, n * t_l3mem / t_ecm)


def predict_performance(n: int, c: EcmContributions, s: ScalingParams) -> float:
    """Performance at ``n`` active cores [work/s]."""
    if n < 1:
        raise ValueError(f"core count must be >= 1, got {n!r}")
    if c.t_l3_mem == 0:
        return n * single_core_performance(c, s.f_core)
    return utilization(n, c.t_ecm, c.t_l3_mem, s.p0) * s.pi_bw


def plain_performance(n: int, c: EcmContributions, s: ScalingParams) -> float:
    """Original ECM multicore prediction: min(n * pi(1), pi_BW)."""
    if c.t_l3_mem == 0:
        return n * single_core_performance(c, s.f_core)
    return plain_utilization(n, c.t_ecm, c.t_l3_mem) * s.pi_bw


def saturation_core_count(c: EcmContributions, s: ScalingParams) -> Optional[int]:
    """Smallest core count that saturates the memory bus, or None if it never does."""
    if c.t_l3_mem == 0:
        return None
    for k, u in enumerate(utilization_series(s.n_cores, c.t_ecm, c.t_l3_mem, s.p0), start=1):
        if u >= 1.0:
            return k
    return None


def plain_saturation_core_count(c: EcmContributions, s: ScalingParams) -> Optional[int]:
    if c.t_l3_mem == 0:
        return None
    for k in range(1, s.n_cores + 1):
        if plain_utilization(k, c.t_ecm, c.t_l3_mem) >= 1.0:
            return k
    return None


def parallel_efficiency(n: int, c: EcmContributions, s: ScalingParams) -> float:
    if n == 1:
        return 1.0
    return predict_performance(n, c, s) / (n * predict_performance(1, c, s))
