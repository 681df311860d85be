"""Chip power as a function of active cores, core clock and Uncore clock.

    P_chip = P_base(f_uncore) + n * P_core(f_core, n)

The baseline is a quadratic in the Uncore clock, optionally piecewise (some
chips change trend below a certain Uncore frequency).  The per-core part has a
static term plus a quadratic dynamic term damped by eps(n)**alpha, where eps is
the parallel efficiency; this captures the slower power growth past the
bandwidth saturation point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

from .machine import OperatingPoint


class FrequencyRangeError(ValueError):
    pass


class UnknownKernelError(KeyError):
    pass


@dataclass(frozen=True)
class BaselineSegment:
    f_max: float  # inclusive upper bound [GHz]
    w0: float
    w1: float
    w2: float

    def __call__(self, f: float) -> float:
        return self.w0 + self.w1 * f + self.w2 * f * f


@dataclass(frozen=True)
class BaselineCoeffs:
    """Piecewise-quadratic baseline; segment ``i`` covers (f_max[i-1], f_max[i]]."""

    segments: Tuple[BaselineSegment, ...]
    f_min: float = 0.0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("baseline needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))
        bounds = [s.f_max for s in self.segments]
        if any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"segment bounds must be strictly increasing, got {bounds}")
        if self.f_min > bounds[0]:
            raise ValueError(f"f_min={self.f_min} lies above the first segment bound {bounds[0]}")

    @property
    def f_max(self) -> float:
        return self.segments[-1].f_max

    def segment_for(self, f: float) -> BaselineSegment:
        if not (self.f_min <= f <= self.f_max):
            raise FrequencyRangeError(
                f"Uncore frequency {f} GHz outside supported interval [{self.f_min}, {self.f_max}] GHz")
        for seg in self.segments:
            if f <= seg.f_max:
                return seg
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class CoreCoeffs:
    w0: float
    w1: float
    w2: float
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("w0", "w1", "w2", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")

    def dynamic(self, f: float) -> float:
        return self.w1 * f + self.w2 * f * f


@dataclass(frozen=True)
class PowerParams:
    baseline: BaselineCoeffs
    per_kernel_core: Dict[str, CoreCoeffs] = field(default_factory=dict)

    def core(self, kernel: str) -> CoreCoeffs:
        try:
            return self.per_kernel_core[kernel]
        except KeyError:
            known = ", ".join(sorted(self.per_kernel_core)) or "none"
            raise UnknownKernelError(f"no core power coefficients for kernel {kernel!r} (known: {known})") from None


def p_base(f_uncore: float, b: BaselineCoeffs) -> float:
    return b.segment_for(f_uncore)(f_uncore)


def p_core(f_core: float, eps: float, c: CoreCoeffs,
           f_range: Optional[Sequence[float]] = None) -> float:
    """Power of one active core; only the dynamic part is damped by eps**alpha."""
    if f_range is not None and not (f_range[0] <= f_core <= f_range[1]):
        raise FrequencyRangeError(
            f"core frequency {f_core} GHz outside supported interval [{f_range[0]}, {f_range[1]}] GHz")
    if not (0 < eps <= 1):
        raise ValueError(f"parallel efficiency must lie in (0, 1], got {eps!r}")
    damping = 1.0 if (eps == 1.0 or c.alpha == 0.0) else eps ** c.alpha
    return c.w0 + c.dynamic(f_core) * damping


def p_chip(op: OperatingPoint, eps: float, params: PowerParams, kernel: str,
           f_range: Optional[Sequence[float]] = None) -> float:
    if op.n < 0:
        raise ValueError(f"active core count must be >= 0, got {op.n!r}")
    core = params.core(kernel)
    base = p_base(op.f_uncore, params.baseline)
    if op.n == 0:
        return base
    return base + op.n * p_core(op.f_core, eps, core, f_range)
