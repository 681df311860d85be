"""Machine and kernel descriptions shared by the prediction and fitting code."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .ecm import EcmContributions

SLAVED = "slaved"
INDEPENDENT = "independent"
SATURATING = "saturating"
SCALABLE = "scalable-fraction-of-peak"

# decimals kept when generating frequency grids; avoids 1.2000000000000002
_GRID_DECIMALS = 9


class ExtrapolationError(ValueError):
    """A bandwidth query fell outside the tabulated frequencies."""


@dataclass(frozen=True, order=True)
class OperatingPoint:
    n: int
    f_core: float
    f_uncore: float


@dataclass(frozen=True)
class FrequencyRange:
    f_min: float
    f_max: float
    step: float = 0.1

    def __post_init__(self):
        if not (0 < self.f_min <= self.f_max):
            raise ValueError(f"invalid frequency range [{self.f_min}, {self.f_max}]")
        if not self.step > 0:
            raise ValueError(f"frequency step must be > 0, got {self.step!r}")

    def __contains__(self, f: float) -> bool:
        tol = 1e-9
        return self.f_min - tol <= f <= self.f_max + tol

    def grid(self, step: Optional[float] = None) -> List[float]:
        step = self.step if step is None else step
        if not step > 0:
            raise ValueError(f"grid step must be > 0, got {step!r}")
        count = int(math.floor((self.f_max - self.f_min) / step + 1e-9))
        return [round(self.f_min + i * step, _GRID_DECIMALS) for i in range(count + 1)]

    def as_tuple(self) -> Tuple[float, float]:
        return (self.f_min, self.f_max)


@dataclass(frozen=True)
class BandwidthTable:
    """Saturated memory bandwidth measured at a set of clock settings.

    ``axis`` picks the free interpolation variable: ``"f_core"`` (single clock
    domain, or bandwidth driven by the core clock) or ``"f_uncore"`` (bandwidth
    driven by the Uncore clock; the core clock is ignored in lookups).
    """

    rows: Tuple[Tuple[float, float, float], ...]
    axis: str = "f_core"

    def __post_init__(self):
        if not self.rows:
            raise ValueError("bandwidth table needs at least one row")
        if self.axis not in ("f_core", "f_uncore"):
            raise ValueError(f"bandwidth axis must be 'f_core' or 'f_uncore', got {self.axis!r}")
        rows = tuple(sorted((float(a), float(b), float(c)) for a, b, c in self.rows))
        pairs = [(r[0], r[1]) for r in rows]
        if len(set(pairs)) != len(pairs):
            raise ValueError("bandwidth table has duplicate (f_core, f_uncore) rows")
        keys = [self._key(r[0], r[1]) for r in rows]
        if len(set(keys)) != len(keys):
            raise ValueError(f"bandwidth table has repeated {self.axis} values; interpolation is 1-D along {self.axis}")
        if any(r[2] <= 0 for r in rows):
            raise ValueError("bandwidth values must be > 0")
        object.__setattr__(self, "rows", rows)

    def _key(self, f_core: float, f_uncore: float) -> float:
        return f_core if self.axis == "f_core" else f_uncore

    def points(self) -> List[Tuple[float, float]]:
        return sorted((self._key(r[0], r[1]), r[2]) for r in self.rows)


def bandwidth_lookup(f_core: float, f_uncore: float, table: BandwidthTable) -> float:
    """Saturated bandwidth [GB/s] at a clock setting, linear between rows."""
    for fc, fu, bw in table.rows:
        if fc == f_core and fu == f_uncore:
            return bw
    x = table._key(f_core, f_uncore)
    pts = table.points()
    xs = [p[0] for p in pts]
    tol = 1e-9
    if x < xs[0] - tol or x > xs[-1] + tol:
        raise ExtrapolationError(
            f"{table.axis}={x} GHz outside tabulated bandwidth range [{xs[0]}, {xs[-1]}] GHz")
    i = bisect.bisect_left(xs, x)
    if i < len(xs) and abs(xs[i] - x) <= tol:
        return pts[i][1]
    if i > 0 and abs(xs[i - 1] - x) <= tol:
        return pts[i - 1][1]
    (x0, y0), (x1, y1) = pts[i - 1], pts[i]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


@dataclass(frozen=True)
class KernelSpec:
    """A loop kernel as seen by the models.

    Saturating kernels carry ECM cycle contributions and their memory traffic;
    ``ecm.t_l3_mem`` is replaced at every operating point from the bandwidth
    table.  Scalable kernels run at a fixed fraction of the machine's peak.
    """

    name: str
    kind: str
    perf_unit: str = "F/s"
    ecm: Optional[EcmContributions] = None
    bytes_per_unit: float = 0.0
    peak_fraction: float = 1.0
    p0: float = 0.0
    # scalable kernels slow down once f_uncore < ratio * f_core (None: never)
    uncore_ratio: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (SATURATING, SCALABLE):
            raise ValueError(f"kernel {self.name!r}: kind must be {SATURATING!r} or {SCALABLE!r}")
        if self.kind == SATURATING:
            if self.ecm is None:
                raise ValueError(f"kernel {self.name!r}: saturating kernels need ECM contributions")
            if self.bytes_per_unit < 0:
                raise ValueError(f"kernel {self.name!r}: bytes_per_unit must be >= 0")
        elif not (0 < self.peak_fraction <= 1):
            raise ValueError(f"kernel {self.name!r}: peak_fraction must lie in (0, 1]")
        if self.p0 < 0:
            raise ValueError(f"kernel {self.name!r}: p0 must be >= 0")
        if self.uncore_ratio is not None and not self.uncore_ratio > 0:
            raise ValueError(f"kernel {self.name!r}: uncore_ratio must be > 0")

    @property
    def memory_bound(self) -> bool:
        return self.kind == SATURATING and self.bytes_per_unit > 0


@dataclass(frozen=True)
class MachineSpec:
    name: str
    n_cores: int
    core_range: FrequencyRange
    uncore_mode: str = SLAVED
    uncore_range: Optional[FrequencyRange] = None
    peak_per_cycle: float = 1.0  # work items per cycle per core
    bandwidth: Optional[BandwidthTable] = None
    bandwidth_path: Optional[str] = None

    def __post_init__(self):
        if self.n_cores < 1:
            raise ValueError("n_cores must be >= 1")
        if self.uncore_mode not in (SLAVED, INDEPENDENT):
            raise ValueError(f"uncore_mode must be {SLAVED!r} or {INDEPENDENT!r}, got {self.uncore_mode!r}")
        if self.uncore_mode == SLAVED and self.uncore_range is not None and self.uncore_range != self.core_range:
            raise ValueError("a slaved Uncore cannot declare its own frequency range")
        if self.uncore_mode == INDEPENDENT and self.uncore_range is None:
            raise ValueError("an independent Uncore needs a frequency range")
        if not self.peak_per_cycle > 0:
            raise ValueError("peak_per_cycle must be > 0")

    @property
    def slaved(self) -> bool:
        return self.uncore_mode == SLAVED

    @property
    def effective_uncore_range(self) -> FrequencyRange:
        return self.core_range if self.slaved else self.uncore_range

    def check(self, op: OperatingPoint) -> None:
        """Raise ValueError unless ``op`` is a valid setting on this machine."""
        if not (1 <= op.n <= self.n_cores):
            raise ValueError(f"core count {op.n} outside 1..{self.n_cores} on {self.name}")
        if op.f_core not in self.core_range:
            r = self.core_range
            raise ValueError(f"core frequency {op.f_core} GHz outside [{r.f_min}, {r.f_max}] GHz on {self.name}")
        if self.slaved:
            if op.f_uncore != op.f_core:
                raise ValueError(f"{self.name} has a slaved Uncore: f_uncore must equal f_core")
        elif op.f_uncore not in self.uncore_range:
            r = self.uncore_range
            raise ValueError(f"Uncore frequency {op.f_uncore} GHz outside [{r.f_min}, {r.f_max}] GHz on {self.name}")

    def grid(self, step: Optional[float] = None,
             cores: Optional[Sequence[int]] = None) -> List[OperatingPoint]:
        """All operating points on a frequency grid, in tie-break order."""
        ns = list(range(1, self.n_cores + 1)) if cores is None else sorted(set(cores))
        points = []
        for n in ns:
            for fc in self.core_range.grid(step):
                uncore = [fc] if self.slaved else self.uncore_range.grid(step)
                for fu in uncore:
                    points.append(OperatingPoint(n, fc, fu))
        return points
