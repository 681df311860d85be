"""Energy per work, EDP, operating-point search and Z-plot series."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence

from . import ecm
from .machine import (SATURATING, KernelSpec, MachineSpec, OperatingPoint, bandwidth_lookup)
from .power import BaselineSegment, CoreCoeffs, PowerParams, p_chip

MIN_ENERGY = "min-energy"
MAX_PERFORMANCE = "max-performance"
MIN_EDP = "min-edp"
OBJECTIVES = (MIN_ENERGY, MAX_PERFORMANCE, MIN_EDP)

NEGATIVE_POWER = "negative-power"


class ConfigurationError(ValueError):
    pass


class AnalyticFailureError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionPoint:
    op: OperatingPoint
    performance: float  # work items / s
    power: float  # W
    energy_per_work: float  # J / work item
    edp_density: float  # J s / work item^2, slope of the EDP line in a Z-plot
    efficiency: float = 1.0
    warnings: FrozenSet[str] = field(default_factory=frozenset)


def _scaling(kernel: KernelSpec, machine: MachineSpec, op: OperatingPoint):
    """ECM contributions and scaling parameters valid at ``op``."""
    if machine.bandwidth is None:
        raise ConfigurationError(f"machine {machine.name} has no bandwidth table; "
                                 f"saturating kernel {kernel.name!r} needs one")
    bw = bandwidth_lookup(op.f_core, op.f_uncore, machine.bandwidth)
    c = kernel.ecm.with_l3_mem(ecm.memory_cycles(kernel.bytes_per_unit, bw, op.f_core))
    s = ecm.ScalingParams(p0=kernel.p0, n_cores=machine.n_cores,
                          pi_bw=ecm.bandwidth_ceiling(kernel.bytes_per_unit, bw, c.work_per_unit),
                          f_core=op.f_core)
    return c, s


def kernel_performance(op: OperatingPoint, kernel: KernelSpec, machine: MachineSpec):
    """(performance [work/s], modeled parallel efficiency) at ``op``."""
    if kernel.kind == SATURATING:
        if kernel.memory_bound:
            c, s = _scaling(kernel, machine, op)
        else:
            c = kernel.ecm.with_l3_mem(0.0)
            s = ecm.ScalingParams(p0=kernel.p0, n_cores=machine.n_cores, pi_bw=math.inf, f_core=op.f_core)
        return ecm.predict_performance(op.n, c, s), ecm.parallel_efficiency(op.n, c, s)
    perf = kernel.peak_fraction * op.n * machine.peak_per_cycle * op.f_core * 1e9
    if kernel.uncore_ratio is not None:
        perf *= min(1.0, op.f_uncore / (kernel.uncore_ratio * op.f_core))
    return perf, 1.0


def predict(op: OperatingPoint, kernel: KernelSpec, machine: MachineSpec,
            params: PowerParams) -> PredictionPoint:
    machine.check(op)
    perf, eps = kernel_performance(op, kernel, machine)
    power = p_chip(op, eps, params, kernel.name)
    warnings = frozenset([NEGATIVE_POWER]) if power <= 0 else frozenset()
    energy = power / perf
    return PredictionPoint(op=op, performance=perf, power=power, energy_per_work=energy,
                           edp_density=energy / perf, efficiency=eps, warnings=warnings)


class FoptResult(NamedTuple):
    raw: float
    clamped: float

    @property
    def was_clamped(self) -> bool:
        return self.raw != self.clamped


def f_opt(n: int, base: BaselineSegment, core: CoreCoeffs,
          f_range: Optional[Sequence[float]] = None) -> FoptResult:
    """Energy-optimal clock for scalable code on a single clock domain.

    Assumes runtime proportional to 1/f and f_uncore == f_core.
    """
    num = base.w0 + n * core.w0
    den = base.w2 + n * core.w2
    if den == 0 or num / den <= 0:
        raise AnalyticFailureError(
            f"no interior energy minimum (static {num:.4g} W, quadratic {den:.4g} W/GHz^2); "
            "use the grid optimizer instead")
    raw = math.sqrt(num / den)
    clamped = raw if f_range is None else min(max(raw, f_range[0]), f_range[1])
    return FoptResult(raw, clamped)


def _score(point: PredictionPoint, objective: str) -> float:
    if objective == MIN_ENERGY:
        return point.energy_per_work
    if objective == MAX_PERFORMANCE:
        return -point.performance
    return point.edp_density


def best_point(points: Iterable[PredictionPoint], objective: str) -> PredictionPoint:
    """Argmin of the objective; ties resolve to lower n, then f_core, then f_uncore."""
    if objective not in OBJECTIVES:
        raise ConfigurationError(f"unknown objective {objective!r}; choose one of {', '.join(OBJECTIVES)}")
    best = None
    best_key = None
    for p in points:
        key = (_score(p, objective), p.op.n, p.op.f_core, p.op.f_uncore)
        if best_key is None or key < best_key:
            best, best_key = p, key
    if best is None:
        raise ConfigurationError("empty feasible grid")
    return best


def evaluate_grid(kernel: KernelSpec, machine: MachineSpec, params: PowerParams,
                  grid_step: Optional[float] = None,
                  cores: Optional[Sequence[int]] = None) -> List[PredictionPoint]:
    ops = machine.grid(grid_step, cores)
    ops = [op for op in ops if 1 <= op.n <= machine.n_cores]
    return [predict(op, kernel, machine, params) for op in ops]


def optimize(kernel: KernelSpec, machine: MachineSpec, params: PowerParams,
             objective: str = MIN_ENERGY, grid_step: Optional[float] = None,
             cores: Optional[Sequence[int]] = None) -> PredictionPoint:
    """Exhaustive search over the machine's frequency grid and core counts."""
    if objective not in OBJECTIVES:
        raise ConfigurationError(f"unknown objective {objective!r}; choose one of {', '.join(OBJECTIVES)}")
    return best_point(evaluate_grid(kernel, machine, params, grid_step, cores), objective)


SWEEP_PARAMETERS = ("n", "f_core", "f_uncore")


def zplot_series(kernel: KernelSpec, machine: MachineSpec, params: PowerParams,
                 sweep: Mapping[str, Sequence[float]]) -> List[PredictionPoint]:
    """Predictions along a one-parameter path.

    ``sweep`` maps parameter names to values; at most one of them may hold
    more than one value.  Missing parameters default to all cores and the
    highest clocks.  On a slaved-Uncore machine ``f_uncore`` follows
    ``f_core`` and cannot be swept on its own.
    """
    unknown = set(sweep) - set(SWEEP_PARAMETERS)
    if unknown:
        raise ConfigurationError(f"unknown sweep parameter(s): {', '.join(sorted(unknown))}")
    varying = [k for k in SWEEP_PARAMETERS if len(sweep.get(k, ())) > 1]
    if len(varying) > 1:
        raise ConfigurationError(f"sweep varies {' and '.join(varying)}; only one parameter may vary")
    if any(len(v) == 0 for v in sweep.values()):
        raise ConfigurationError("sweep parameters need at least one value")
    fcs = [float(v) for v in sweep.get("f_core", [machine.core_range.f_max])]
    if machine.slaved and "f_uncore" in sweep and [float(v) for v in sweep["f_uncore"]] != fcs:
        raise ConfigurationError(f"{machine.name} has a slaved Uncore: f_uncore follows f_core and "
                                 "cannot be set separately")

    ns = [int(v) for v in sweep.get("n", [machine.n_cores])]
    fus = None if machine.slaved else [float(v) for v in sweep.get("f_uncore", [machine.uncore_range.f_max])]
    ops = []
    for n in ns:
        for fc in fcs:
            for fu in (fus if fus is not None else [fc]):
                ops.append(OperatingPoint(n, fc, fu))
    key = {"n": lambda o: o.n, "f_core": lambda o: o.f_core, "f_uncore": lambda o: o.f_uncore}
    if varying:
        ops.sort(key=key[varying[0]])
    return [predict(op, kernel, machine, params) for op in ops]
