"""The model file: machine, kernels, fitted parameters and provenance as JSON.

A *setup* file is a model file without the ``power`` block; ``ecmpower fit``
reads a setup file plus measurements and writes a complete model file.  The
layout is documented in ``docs/model-file.md``.

Floats are written with Python's shortest round-trip representation, so a
write/read cycle is lossless.  Two digests guard against silent edits: one
over the bandwidth table the machine references and one over the model
content itself.  Both are checked on load.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .ecm import EcmContributions
from .fitting import FitReport
from .machine import (SATURATING, BandwidthTable, FrequencyRange, KernelSpec, MachineSpec)
from .power import BaselineCoeffs, BaselineSegment, CoreCoeffs, PowerParams

FORMAT = "ecmpower-model"
VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass
class ModelFile:
    machine: MachineSpec
    kernels: Dict[str, KernelSpec]
    power: Optional[PowerParams] = None
    chip_id: Optional[str] = None
    fit_reports: Dict[str, FitReport] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)

    def kernel(self, name: str) -> KernelSpec:
        try:
            return self.kernels[name]
        except KeyError:
            raise ModelFileError(f"kernel {name!r} not in model (have: {', '.join(sorted(self.kernels))})") from None

    def require_power(self) -> PowerParams:
        if self.power is None:
            raise ModelFileError("model has no fitted power parameters; run `ecmpower fit` first")
        return self.power


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_bandwidth_table(path, axis: str = "f_core") -> BandwidthTable:
    """Read a ``f_core_ghz,f_uncore_ghz,bandwidth_gbs`` CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"f_core_ghz", "f_uncore_ghz", "bandwidth_gbs"}
        if not need <= set(reader.fieldnames or []):
            raise ModelFileError(f"{path}: bandwidth table needs columns {', '.join(sorted(need))}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((float(row["f_core_ghz"]), float(row["f_uncore_ghz"]), float(row["bandwidth_gbs"])))
            except (TypeError, ValueError) as exc:
                raise ModelFileError(f"{path}:{lineno}: {exc}") from None
    try:
        return BandwidthTable(tuple(rows), axis)
    except ValueError as exc:
        raise ModelFileError(f"{path}: {exc}") from None


def write_bandwidth_table(table: BandwidthTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f_core_ghz", "f_uncore_ghz", "bandwidth_gbs"])
        for fc, fu, bw in table.rows:
            w.writerow([repr(fc), repr(fu), repr(bw)])


# -- to / from plain trees ----------------------------------------------------

def _range_to(r: Optional[FrequencyRange]):
    return None if r is None else {"min": r.f_min, "max": r.f_max, "step": r.step}


def _range_from(d) -> Optional[FrequencyRange]:
    return None if d is None else FrequencyRange(float(d["min"]), float(d["max"]), float(d.get("step", 0.1)))


def _kernel_to(k: KernelSpec) -> dict:
    d: Dict[str, Any] = {"kind": k.kind, "perf_unit": k.perf_unit}
    if k.kind == SATURATING:
        e = k.ecm
        d["ecm"] = {"t_comp": e.t_comp, "t_reg_l1": e.t_reg_l1, "t_l1_l2": e.t_l1_l2,
                    "t_l2_l3": e.t_l2_l3, "t_l3_mem": e.t_l3_mem, "work_per_unit": e.work_per_unit}
        d["bytes_per_unit"] = k.bytes_per_unit
        d["p0"] = k.p0
    else:
        d["peak_fraction"] = k.peak_fraction
        if k.uncore_ratio is not None:
            d["uncore_ratio"] = k.uncore_ratio
    return d


def _kernel_from(name: str, d: dict) -> KernelSpec:
    ecm = None
    if d.get("ecm") is not None:
        e = d["ecm"]
        ecm = EcmContributions(float(e["t_comp"]), float(e["t_reg_l1"]), float(e["t_l1_l2"]),
                               float(e["t_l2_l3"]), float(e.get("t_l3_mem", 0.0)),
                               float(e.get("work_per_unit", 1.0)))
    ratio = d.get("uncore_ratio")
    return KernelSpec(name=name, kind=d["kind"], perf_unit=d.get("perf_unit", "F/s"), ecm=ecm,
                      bytes_per_unit=float(d.get("bytes_per_unit", 0.0)),
                      peak_fraction=float(d.get("peak_fraction", 1.0)), p0=float(d.get("p0", 0.0)),
                      uncore_ratio=None if ratio is None else float(ratio))


def _power_to(p: PowerParams) -> dict:
    return {
        "baseline": {"f_min": p.baseline.f_min,
                     "segments": [{"f_max": s.f_max, "W0": s.w0, "W1": s.w1, "W2": s.w2}
                                  for s in p.baseline.segments]},
        "core": {k: {"W0": c.w0, "W1": c.w1, "W2": c.w2, "alpha": c.alpha}
                 for k, c in sorted(p.per_kernel_core.items())},
    }


def _power_from(d: dict) -> PowerParams:
    b = d["baseline"]
    base = BaselineCoeffs(tuple(BaselineSegment(float(s["f_max"]), float(s["W0"]), float(s["W1"]), float(s["W2"]))
                                for s in b["segments"]), f_min=float(b.get("f_min", 0.0)))
    core = {k: CoreCoeffs(float(c["W0"]), float(c["W1"]), float(c["W2"]), float(c.get("alpha", 0.0)))
            for k, c in d.get("core", {}).items()}
    return PowerParams(base, core)


def _machine_to(m: MachineSpec) -> dict:
    d = {"name": m.name, "n_cores": m.n_cores, "core_frequency": _range_to(m.core_range),
         "uncore_mode": m.uncore_mode, "uncore_frequency": _range_to(m.uncore_range),
         "peak_work_per_cycle": m.peak_per_cycle}
    if m.bandwidth_path is not None:
        d["bandwidth_table"] = {"path": m.bandwidth_path, "axis": m.bandwidth.axis}
    return d


def _content(model: ModelFile, bandwidth_digest: Optional[str]) -> dict:
    tree: Dict[str, Any] = {"format": FORMAT, "version": VERSION}
    if model.chip_id is not None:
        tree["chip_id"] = model.chip_id
    tree["machine"] = _machine_to(model.machine)
    if bandwidth_digest is not None:
        tree["machine"]["bandwidth_table"]["sha256"] = bandwidth_digest
    tree["kernels"] = {k: _kernel_to(v) for k, v in sorted(model.kernels.items())}
    if model.power is not None:
        tree["power"] = _power_to(model.power)
    return tree


def _digest(tree: dict) -> str:
    return hashlib.sha256(json.dumps(tree, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def timestamp() -> str:
    """UTC creation time; honours SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
           else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0))
    return now.isoformat().replace("+00:00", "Z")


def dumps_model(model: ModelFile, base_dir) -> str:
    """Serialize; the bandwidth table path is resolved against ``base_dir``."""
    bw_digest = None
    if model.machine.bandwidth_path is not None:
        bw_file = Path(base_dir, model.machine.bandwidth_path)
        bw_digest = sha256_file(bw_file) if bw_file.exists() else None
    tree = _content(model, bw_digest)
    if model.fit_reports:
        tree["fit_reports"] = {k: r.to_dict() for k, r in model.fit_reports.items()}
    prov = dict(model.provenance)
    prov["content_sha256"] = _digest(_content(model, bw_digest))
    tree["provenance"] = prov
    return json.dumps(tree, indent=2) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: ModelFile, path) -> None:
    path = Path(path)
    atomic_write(path, dumps_model(model, path.parent))


def loads_model(text: str, base_dir=".", verify: bool = True) -> ModelFile:
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"not a JSON document: {exc}") from None
    if tree.get("format", FORMAT) != FORMAT:
        raise ModelFileError(f"unexpected format {tree.get('format')!r}")
    if int(tree.get("version", VERSION)) > VERSION:
        raise ModelFileError(f"model file version {tree['version']} is newer than supported ({VERSION})")
    try:
        md = tree["machine"]
        bw_ref = md.get("bandwidth_table")
        table = None
        bw_path = None
        if bw_ref is not None:
            bw_path = bw_ref["path"]
            bw_file = Path(base_dir, bw_path)
            if not bw_file.exists():
                raise ModelFileError(f"bandwidth table {bw_file} not found")
            if verify and "sha256" in bw_ref and sha256_file(bw_file) != bw_ref["sha256"]:
                raise ModelFileError(f"bandwidth table {bw_file} does not match the digest recorded in the model")
            table = read_bandwidth_table(bw_file, bw_ref.get("axis", "f_core"))
        machine = MachineSpec(name=md["name"], n_cores=int(md["n_cores"]),
                              core_range=_range_from(md["core_frequency"]),
                              uncore_mode=md.get("uncore_mode", "slaved"),
                              uncore_range=_range_from(md.get("uncore_frequency")),
                              peak_per_cycle=float(md.get("peak_work_per_cycle", 1.0)),
                              bandwidth=table, bandwidth_path=bw_path)
        kernels = {k: _kernel_from(k, v) for k, v in tree.get("kernels", {}).items()}
        power = _power_from(tree["power"]) if tree.get("power") is not None else None
        reports = {k: FitReport.from_dict(v) for k, v in tree.get("fit_reports", {}).items()}
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"invalid model document: {exc.__class__.__name__}: {exc}") from None
    model = ModelFile(machine, kernels, power, tree.get("chip_id"), reports, dict(tree.get("provenance", {})))
    if power is not None:
        missing = sorted(set(kernels) - set(power.per_kernel_core))
        if missing:
            raise ModelFileError(f"no core power coefficients for kernel(s): {', '.join(missing)}")
    recorded = model.provenance.pop("content_sha256", None)
    if verify and recorded is not None:
        bw_digest = bw_ref.get("sha256") if bw_ref else None
        if _digest(_content(model, bw_digest)) != recorded:
            raise ModelFileError("model content does not match its recorded digest (file edited by hand?)")
    return model


def load_model(path, verify: bool = True) -> ModelFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc.strerror}") from None
    return loads_model(text, path.parent, verify)
