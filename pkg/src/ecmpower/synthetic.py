"""Synthetic machines and measurement data generated from published fit values.

Real RAPL measurements are not shipped.  The fixtures below describe two
Intel server chips (Sandy Bridge-EP, 8 cores, one clock domain; Broadwell-EP,
18 cores, separate Uncore clock) with the power-model parameters reported for
them, plausible STREAM-triad ECM inputs and made-up saturated-bandwidth
curves.  ``generate_measurements`` evaluates the models on a grid and
optionally applies seeded multiplicative Gaussian noise.

Run ``python -m ecmpower.synthetic OUTDIR`` to rewrite the shipped fixtures.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .ecm import EcmContributions
from .energy import predict
from .machine import (INDEPENDENT, SATURATING, SCALABLE, SLAVED, BandwidthTable, FrequencyRange,
                      KernelSpec, MachineSpec, OperatingPoint)
from .measurements import MeasurementRecord, write_measurements
from .model import ModelFile, dumps_model, write_bandwidth_table
from .power import BaselineCoeffs, BaselineSegment, CoreCoeffs, PowerParams

SNB_BASELINE = BaselineCoeffs((BaselineSegment(2.7, 14.62, 1.07, 1.02),), f_min=1.2)
SNB_DGEMM = CoreCoeffs(1.42, -0.52, 1.51, 0.4)
SNB_STREAM = CoreCoeffs(1.33, 0.80, 1.22, 0.4)

BDW_BASELINE = BaselineCoeffs((BaselineSegment(1.7, 27.2, -6.45, 5.71),
                               BaselineSegment(2.8, 70.8, -44.1, 13.1)), f_min=1.2)
BDW_DGEMM = CoreCoeffs(-0.11, -1.46, 1.47, 0.5)
BDW_STREAM = CoreCoeffs(0.45, 2.95, -0.24, 0.5)

# STREAM triad a[i] = b[i] + s*c[i], one work unit = one cache line (8 doubles);
# 4 lines of memory traffic incl. write-allocate, 16 flops per unit.
STREAM_ECM = EcmContributions(t_comp=4.0, t_reg_l1=6.0, t_l1_l2=10.0, t_l2_l3=10.0, t_l3_mem=0.0,
                              work_per_unit=16.0)
STREAM_BYTES = 256.0


def _freqs(lo: float, hi: float, step: float = 0.1) -> List[float]:
    return FrequencyRange(lo, hi, step).grid()


def snb_bandwidth() -> BandwidthTable:
    # single clock domain: bandwidth grows mildly with the (Un)core clock
    rows = [(f, f, round(36.0 + 3.5 * (f - 1.2), 6)) for f in _freqs(1.2, 2.7)]
    return BandwidthTable(tuple(rows), "f_core")


def bdw_bandwidth() -> BandwidthTable:
    # bandwidth follows the Uncore clock and saturates above ~2.2 GHz
    rows = [(2.3, f, round(60.0 - 14.0 * max(0.0, 2.2 - f) ** 2, 6)) for f in _freqs(1.2, 2.8)]
    return BandwidthTable(tuple(rows), "f_uncore")


def snb_model(bandwidth_path: str = "snb_bandwidth.csv") -> ModelFile:
    machine = MachineSpec(name="SNB", n_cores=8, core_range=FrequencyRange(1.2, 2.7, 0.1), uncore_mode=SLAVED,
                          peak_per_cycle=8.0, bandwidth=snb_bandwidth(), bandwidth_path=bandwidth_path)
    kernels = {
        "dgemm": KernelSpec("dgemm", SCALABLE, perf_unit="GF/s", peak_fraction=0.95),
        "stream": KernelSpec("stream", SATURATING, perf_unit="GF/s", ecm=STREAM_ECM,
                             bytes_per_unit=STREAM_BYTES, p0=7.8),
    }
    power = PowerParams(SNB_BASELINE, {"dgemm": SNB_DGEMM, "stream": SNB_STREAM})
    return ModelFile(machine, kernels, power, chip_id="snb-0")


def bdw_model(bandwidth_path: str = "bdw_bandwidth.csv") -> ModelFile:
    machine = MachineSpec(name="BDW", n_cores=18, core_range=FrequencyRange(1.2, 2.3, 0.1),
                          uncore_mode=INDEPENDENT, uncore_range=FrequencyRange(1.2, 2.8, 0.1),
                          peak_per_cycle=16.0, bandwidth=bdw_bandwidth(), bandwidth_path=bandwidth_path)
    kernels = {
        "dgemm": KernelSpec("dgemm", SCALABLE, perf_unit="GF/s", peak_fraction=0.95, uncore_ratio=0.9),
        "stream": KernelSpec("stream", SATURATING, perf_unit="GF/s", ecm=STREAM_ECM,
                             bytes_per_unit=STREAM_BYTES, p0=5.2),
    }
    power = PowerParams(BDW_BASELINE, {"dgemm": BDW_DGEMM, "stream": BDW_STREAM})
    return ModelFile(machine, kernels, power, chip_id="bdw-0")


def default_settings(machine: MachineSpec) -> List[tuple]:
    """Clock pairs to measure: the diagonal plus a max-core-clock Uncore sweep."""
    fcs = machine.core_range.grid()
    if machine.slaved:
        return [(f, f) for f in fcs]
    fus = machine.uncore_range.grid()
    pairs = {(f, f) for f in fcs if f in machine.uncore_range}
    pairs |= {(machine.core_range.f_max, fu) for fu in fus}
    pairs |= {(fc, machine.uncore_range.f_max) for fc in fcs}
    return sorted(pairs)


def generate_measurements(model: ModelFile, kernels: Optional[Sequence[str]] = None,
                          settings: Optional[Iterable[tuple]] = None,
                          cores: Optional[Sequence[int]] = None,
                          noise: float = 0.0, seed: int = 0,
                          chip_id: Optional[str] = None) -> List[MeasurementRecord]:
    """Model evaluations as measurement records, optionally with relative noise."""
    machine = model.machine
    kernels = sorted(model.kernels) if kernels is None else list(kernels)
    settings = default_settings(machine) if settings is None else list(settings)
    cores = range(1, machine.n_cores + 1) if cores is None else cores
    rng = np.random.default_rng(seed)
    out = []
    for k in kernels:
        spec = model.kernels[k]
        for fc, fu in settings:
            for n in cores:
                p = predict(OperatingPoint(n, fc, fu), spec, machine, model.power)
                perf, power = p.performance, p.power
                if noise:
                    perf *= 1.0 + noise * rng.standard_normal()
                    power *= 1.0 + noise * rng.standard_normal()
                out.append(MeasurementRecord(chip_id or model.chip_id or "chip", k, n, fc, fu, perf, power, 10))
    return out


def setup_of(model: ModelFile) -> ModelFile:
    """The model with fitted values stripped: what a user writes by hand before fitting."""
    kernels = {k: replace(v, p0=0.0) for k, v in model.kernels.items()}
    return ModelFile(model.machine, kernels, None, model.chip_id)


def write_fixture(model: ModelFile, outdir, stem: str, noise: float = 0.0, seed: int = 0) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_bandwidth_table(model.machine.bandwidth, outdir / model.machine.bandwidth_path)
    (outdir / f"{stem}_setup.json").write_text(dumps_model(setup_of(model), outdir))
    (outdir / f"{stem}_truth.json").write_text(dumps_model(model, outdir))
    write_measurements(generate_measurements(model, noise=noise, seed=seed),
                       outdir / f"{stem}_measurements.csv", "GF/s")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    outdir = Path(argv[0]) if argv else Path(__file__).parent / "data"
    write_fixture(snb_model(), outdir, "snb")
    write_fixture(bdw_model(), outdir, "bdw")
    return 0


if __name__ == "__main__":
    sys.exit(main())
