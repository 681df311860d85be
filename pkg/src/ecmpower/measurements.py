"""Measurement records and the measurement CSV format.

Header (comma separated, '.' decimal point)::

    chip_id,kernel,n,f_core_ghz,f_uncore_ghz,performance,perf_unit,power_w,reps

``perf_unit`` is a work unit per second with an optional SI prefix
(``GF/s``, ``MIt/s``, ``F/s``, ...).  All records in one file must use the
same unit.  Performance is converted to unprefixed work items per second on
ingestion.
"""

from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .machine import MachineSpec

COLUMNS = ("chip_id", "kernel", "n", "f_core_ghz", "f_uncore_ghz", "performance", "perf_unit", "power_w", "reps")

_PREFIXES = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12, "P": 1e15}
_UNIT_RE = re.compile(r"^([kMGTP]?)([A-Za-z][A-Za-z0-9_]*/s)$")


class MeasurementError(ValueError):
    """Raised when a measurement file fails validation; ``problems`` lists each issue."""

    def __init__(self, message: str, problems: Sequence[str] = ()):
        super().__init__(message if not problems else message + "\n" + "\n".join(problems))
        self.problems = list(problems)


def unit_scale(perf_unit: str) -> float:
    """Multiplier from ``perf_unit`` to unprefixed work items per second."""
    m = _UNIT_RE.match(perf_unit.strip())
    if not m:
        raise ValueError(f"unrecognised performance unit {perf_unit!r} (expected e.g. 'GF/s', 'MIt/s')")
    return _PREFIXES[m.group(1)]


@dataclass(frozen=True)
class MeasurementRecord:
    chip_id: str
    kernel: str
    n: int
    f_core: float
    f_uncore: float
    performance: float  # work items / s
    power: float  # W
    repetitions: int = 1
    line: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (self.performance > 0 and math.isfinite(self.performance)):
            raise ValueError(f"performance must be > 0, got {self.performance}")
        if not (self.power > 0 and math.isfinite(self.power)):
            raise ValueError(f"power must be > 0, got {self.power}")

    @property
    def label(self) -> str:
        return f"{self.kernel} n={self.n} f_core={self.f_core:g} f_uncore={self.f_uncore:g}"


def setting_key(r: MeasurementRecord) -> Tuple[str, str, float, float]:
    return (r.chip_id, r.kernel, r.f_core, r.f_uncore)


def measured_efficiencies(records: Sequence[MeasurementRecord]) -> List[Optional[float]]:
    """Measured parallel efficiency perf(n) / (n * perf(1)) for each record.

    The reference is the n=1 record with the same chip, kernel and clocks
    (averaged if repeated).  Records without such a reference get None.
    """
    single: Dict[tuple, List[float]] = defaultdict(list)
    for r in records:
        if r.n == 1:
            single[setting_key(r)].append(r.performance)
    out = []
    for r in records:
        ref = single.get(setting_key(r))
        if not ref:
            out.append(None)
            continue
        out.append(r.performance / (r.n * (sum(ref) / len(ref))))
    return out


def _parse_row(row: Dict[str, str], lineno: int, has_uncore: bool,
               machine: Optional[MachineSpec]) -> Tuple[MeasurementRecord, str]:
    chip = (row["chip_id"] or "").strip()
    kernel = (row["kernel"] or "").strip()
    if not chip or not kernel:
        raise ValueError("chip_id and kernel must be non-empty")
    n = int(row["n"])
    f_core = float(row["f_core_ghz"])
    raw_uncore = (row.get("f_uncore_ghz") or "").strip() if has_uncore else ""
    if raw_uncore:
        f_uncore = float(raw_uncore)
    elif machine is not None and machine.slaved:
        f_uncore = f_core
    else:
        raise ValueError("f_uncore_ghz missing (only allowed for machines with a slaved Uncore)")
    unit = (row["perf_unit"] or "").strip()
    scale = unit_scale(unit)
    perf = float(row["performance"]) * scale
    power = float(row["power_w"])
    reps = int(row["reps"]) if (row.get("reps") or "").strip() else 1
    if perf <= 0:
        raise ValueError(f"performance must be > 0, got {row['performance']}")
    if power <= 0:
        raise ValueError(f"power_w must be > 0, got {row['power_w']}")
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if machine is not None:
        if not 1 <= n <= machine.n_cores:
            raise ValueError(f"n={n} outside 1..{machine.n_cores}")
        if f_core not in machine.core_range:
            raise ValueError(f"f_core_ghz={f_core} outside the machine's core range")
        if machine.slaved and f_uncore != f_core:
            raise ValueError("slaved-Uncore machine: f_uncore_ghz must equal f_core_ghz")
        if not machine.slaved and f_uncore not in machine.uncore_range:
            raise ValueError(f"f_uncore_ghz={f_uncore} outside the machine's Uncore range")
    rec = MeasurementRecord(chip_id=chip, kernel=kernel, n=n, f_core=f_core, f_uncore=f_uncore,
                            performance=perf, power=power, repetitions=reps, line=lineno)
    return rec, unit


def ingest_measurements(path, machine: Optional[MachineSpec] = None) -> List[MeasurementRecord]:
    """Read and validate a measurement CSV; raise MeasurementError listing every bad row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        required = [c for c in COLUMNS if c not in ("f_uncore_ghz", "reps")]
        missing = [c for c in required if c not in header]
        if missing:
            raise MeasurementError(f"{path}: schema mismatch, missing column(s): {', '.join(missing)}")
        unexpected = [c for c in header if c not in COLUMNS]
        if unexpected:
            raise MeasurementError(f"{path}: schema mismatch, unknown column(s): {', '.join(unexpected)}")
        has_uncore = "f_uncore_ghz" in header
        if not has_uncore and (machine is None or not machine.slaved):
            raise MeasurementError(f"{path}: column f_uncore_ghz is required unless the machine's Uncore is slaved")
        records, problems, units = [], [], {}
        for lineno, row in enumerate(reader, start=2):
            if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                continue
            try:
                rec, unit = _parse_row(row, lineno, has_uncore, machine)
            except (ValueError, TypeError, KeyError) as exc:
                problems.append(f"{path}:{lineno}: {exc}")
                continue
            units.setdefault(unit, lineno)
            records.append(rec)
    if len(units) > 1:
        listing = ", ".join(f"{u!r} (first at line {ln})" for u, ln in units.items())
        problems.append(f"{path}: mixed performance units in one file: {listing}")
    if problems:
        raise MeasurementError(f"{path}: {len(problems)} invalid row(s)", problems)
    return records


def write_measurements(records: Iterable[MeasurementRecord], path, perf_unit: str = "GF/s") -> None:
    scale = unit_scale(perf_unit)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([r.chip_id, r.kernel, r.n, f"{r.f_core:g}", f"{r.f_uncore:g}",
                        repr(r.performance / scale), perf_unit, repr(r.power), r.repetitions])
