"""Command-line interface.

    ecmpower fit       --setup S.json --measurements M.csv -o MODEL.json
    ecmpower predict   --model MODEL.json --kernel K --cores N --f-core F [--f-uncore FU]
    ecmpower optimize  --model MODEL.json --kernel K --objective {min-energy,max-performance,min-edp}
    ecmpower zplot     --model MODEL.json --kernel K --sweep {n,f_core,f_uncore}
    ecmpower fleet     MODEL.json [MODEL.json ...]
    ecmpower validate  --model MODEL.json --measurements M.csv

Exit status: 0 on success, 1 when inputs fail validation, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import energy, fitting, fleet
from .machine import SATURATING, SCALABLE, OperatingPoint
from .measurements import MeasurementError, ingest_measurements, unit_scale
from .model import ModelFile, ModelFileError, atomic_write, load_model, save_model, sha256_file, timestamp

PREDICTION_COLUMNS = ("n", "f_core_ghz", "f_uncore_ghz", "performance", "perf_unit", "power_w",
                      "energy_per_work_j", "edp_density", "warnings")


class UsageError(Exception):
    def __init__(self, flag: str, message: str, remedy: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag
        self.remedy = remedy


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.stderr.write(f"hint: run `{self.prog} --help` to list the accepted flags and values\n")
        raise SystemExit(2)


def fmt(x: float) -> str:
    return format(x, ".10g")


def _ghz(x: float) -> str:
    return format(x, ".6g")


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def prediction_rows(points: Sequence[energy.PredictionPoint], perf_unit: str) -> List[list]:
    scale = unit_scale(perf_unit)
    return [[p.op.n, _ghz(p.op.f_core), _ghz(p.op.f_uncore), fmt(p.performance / scale), perf_unit,
             fmt(p.power), fmt(p.energy_per_work), fmt(p.edp_density), ";".join(sorted(p.warnings))]
            for p in points]


def _emit(csv_text: str, summary: str, output: Optional[str], out) -> None:
    """CSV to ``output`` (or stdout); summary to stdout, or stderr when stdout carries CSV."""
    if output:
        atomic_write(output, csv_text)
        out.write(summary)
    else:
        out.write(csv_text)
        sys.stderr.write(summary)


def describe(p: energy.PredictionPoint, perf_unit: str) -> str:
    scale = unit_scale(perf_unit)
    warn = f"  [{', '.join(sorted(p.warnings))}]" if p.warnings else ""
    return (f"n={p.op.n} f_core={_ghz(p.op.f_core)} GHz f_uncore={_ghz(p.op.f_uncore)} GHz: "
            f"{p.performance / scale:.4g} {perf_unit}, {p.power:.4g} W, "
            f"{p.energy_per_work:.4g} J/work, EDP slope {p.edp_density:.4g}{warn}")


def _parse_cores(text: Optional[str], flag: str = "--cores") -> Optional[List[int]]:
    if text is None:
        return None
    cores = []
    try:
        for part in text.split(","):
            if "-" in part:
                lo, hi = part.split("-")
                cores.extend(range(int(lo), int(hi) + 1))
            else:
                cores.append(int(part))
    except ValueError:
        raise UsageError(flag, f"cannot parse {text!r}", "give core counts like '8', '1-8' or '1,2,4,8'") from None
    return cores


def _parse_floats(text: str, flag: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(flag, f"cannot parse {text!r}", "give comma-separated numbers, e.g. 1.2,1.6,2.0") from None


def _load(path) -> ModelFile:
    return load_model(path)


def _operating_point(model: ModelFile, n: int, f_core: float, f_uncore: Optional[float]) -> OperatingPoint:
    if model.machine.slaved:
        if f_uncore is not None and f_uncore != f_core:
            raise UsageError("--f-uncore", f"{model.machine.name} clocks the Uncore with the cores",
                             "omit --f-uncore or set it equal to --f-core")
        f_uncore = f_core
    elif f_uncore is None:
        raise UsageError("--f-uncore", f"{model.machine.name} has an independent Uncore clock",
                         "add --f-uncore GHZ")
    return OperatingPoint(n, f_core, f_uncore)


# -- subcommands ---------------------------------------------------------------

def cmd_fit(args, out) -> int:
    setup_path = Path(args.setup)
    setup = load_model(setup_path)
    records = ingest_measurements(args.measurements, setup.machine)
    chips = sorted({r.chip_id for r in records})
    chip = args.chip
    if chip is None:
        if len(chips) != 1:
            raise UsageError("--chip", f"measurements cover {len(chips)} chips ({', '.join(chips)})",
                             "pick one with --chip ID")
        chip = chips[0]
    records = [r for r in records if r.chip_id == chip]
    if not records:
        raise UsageError("--chip", f"no measurements for chip {chip!r}", f"choose one of {', '.join(chips)}")
    bp = args.breakpoint
    if bp not in ("auto", "none"):
        try:
            bp = float(bp)
        except ValueError:
            raise UsageError("--breakpoint", f"invalid value {bp!r}", "use 'auto', 'none' or a frequency in GHz") from None
    elif bp == "none":
        bp = None
    result = fitting.fit_model(records, setup.machine, setup.kernels, args.efficiency_cutoff, bp,
                               args.baseline_kernel or None)

    out_path = Path(args.output)
    machine = setup.machine
    inputs = {"measurements": {"path": os.path.relpath(Path(args.measurements).resolve(), out_path.parent.resolve()),
                               "sha256": sha256_file(args.measurements)},
              "setup": {"path": os.path.relpath(setup_path.resolve(), out_path.parent.resolve()),
                        "sha256": sha256_file(setup_path)}}
    if machine.bandwidth_path is not None:
        bw_abs = (setup_path.parent / machine.bandwidth_path).resolve()
        machine = replace(machine, bandwidth_path=os.path.relpath(bw_abs, out_path.parent.resolve()))
    model = ModelFile(machine, result.kernels, result.power, chip, result.reports,
                      {"created": timestamp(), "efficiency_cutoff": args.efficiency_cutoff,
                       "breakpoint": args.breakpoint, "inputs": inputs})
    save_model(model, out_path)

    lines = [f"fitted chip {chip}: {len(records)} records -> {out_path}"]
    lines.append(result.reports["baseline"].summary("baseline power (W vs Uncore GHz)"))
    for name, rep in result.reports.items():
        if name != "baseline":
            lines.append(rep.summary(name))
    out.write("\n".join(lines) + "\n")
    return 0


def cmd_predict(args, out) -> int:
    model = _load(args.model)
    kernel = model.kernel(args.kernel)
    op = _operating_point(model, args.cores, args.f_core, args.f_uncore)
    p = energy.predict(op, kernel, model.machine, model.require_power())
    _emit(_csv_text(PREDICTION_COLUMNS, prediction_rows([p], kernel.perf_unit)),
          describe(p, kernel.perf_unit) + "\n", args.output, out)
    return 0


def _fopt_note(model: ModelFile, kernel, n: int) -> Optional[str]:
    if kernel.kind != SCALABLE or not model.machine.slaved or kernel.uncore_ratio is not None:
        return None
    power = model.require_power()
    r = model.machine.core_range
    if len(power.baseline.segments) != 1:
        return None
    try:
        res = energy.f_opt(n, power.baseline.segments[0], power.core(kernel.name), r.as_tuple())
    except energy.AnalyticFailureError as exc:
        return f"analytic f_opt: {exc}"
    clamp = f" (clamped to {res.clamped:.4g} GHz)" if res.was_clamped else ""
    return f"analytic f_opt at n={n}: {res.raw:.4g} GHz{clamp}"


def cmd_optimize(args, out) -> int:
    model = _load(args.model)
    kernel = model.kernel(args.kernel)
    power = model.require_power()
    cores = _parse_cores(args.cores)
    if cores is not None and not all(1 <= c <= model.machine.n_cores for c in cores):
        raise UsageError("--cores", f"core counts must lie in 1..{model.machine.n_cores}", "narrow the range")
    points = energy.evaluate_grid(kernel, model.machine, power, args.grid_step, cores)
    best = energy.best_point(points, args.objective)
    lines = [f"{args.objective} over {len(points)} operating points ({kernel.name} on {model.machine.name}):",
             "  " + describe(best, kernel.perf_unit)]
    note = _fopt_note(model, kernel, best.op.n)
    if note:
        lines.append("  " + note)
    _emit(_csv_text(PREDICTION_COLUMNS, prediction_rows([best], kernel.perf_unit)),
          "\n".join(lines) + "\n", args.output, out)
    return 0


def cmd_zplot(args, out) -> int:
    model = _load(args.model)
    kernel = model.kernel(args.kernel)
    machine = model.machine
    if args.sweep == "f_uncore" and machine.slaved:
        raise UsageError("--sweep", f"{machine.name} clocks the Uncore with the cores", "use --sweep f_core")
    if args.values is not None:
        values = _parse_floats(args.values, "--values")
    elif args.sweep == "n":
        values = list(range(1, machine.n_cores + 1))
    elif args.sweep == "f_core":
        values = machine.core_range.grid(args.grid_step)
    else:
        values = machine.uncore_range.grid(args.grid_step)
    sweep: Dict[str, list] = {args.sweep: values}
    fixed = {"n": [args.cores] if args.cores is not None else None,
             "f_core": [args.f_core] if args.f_core is not None else None,
             "f_uncore": [args.f_uncore] if args.f_uncore is not None else None}
    flags = {"n": "--cores", "f_core": "--f-core", "f_uncore": "--f-uncore"}
    for key, val in fixed.items():
        if val is None:
            continue
        if key == args.sweep:
            raise UsageError(flags[key], f"{key} is the swept parameter", "use --values to choose its values")
        sweep[key] = val
    if machine.slaved and args.f_uncore is not None:
        raise UsageError("--f-uncore", f"{machine.name} clocks the Uncore with the cores", "omit --f-uncore")
    if "n" in sweep:
        sweep["n"] = [int(v) for v in sweep["n"]]
    series = energy.zplot_series(kernel, machine, model.require_power(), sweep)
    summary = [f"Z-plot of {kernel.name} on {machine.name}, sweeping {args.sweep} ({len(series)} points)"]
    if series:
        e = energy.best_point(series, energy.MIN_ENERGY)
        d = energy.best_point(series, energy.MIN_EDP)
        summary.append("  lowest energy: " + describe(e, kernel.perf_unit))
        summary.append("  lowest EDP:    " + describe(d, kernel.perf_unit))
    _emit(_csv_text(PREDICTION_COLUMNS, prediction_rows(series, kernel.perf_unit)),
          "\n".join(summary) + "\n", args.output, out)
    return 0


def model_parameters(model: ModelFile) -> Dict[str, float]:
    """Flat parameter map of a fitted model, as compared across a fleet."""
    power = model.require_power()
    params: Dict[str, float] = {}
    segs = power.baseline.segments
    for i, s in enumerate(segs, start=1):
        suffix = "" if len(segs) == 1 else f"[seg{i}]"
        params[f"W0_base{suffix}"] = s.w0
        params[f"W1_base{suffix}"] = s.w1
        params[f"W2_base{suffix}"] = s.w2
    for k, c in sorted(power.per_kernel_core.items()):
        params[f"W0_core[{k}]"] = c.w0
        params[f"W1_core[{k}]"] = c.w1
        params[f"W2_core[{k}]"] = c.w2
        kern = model.kernels.get(k)
        if kern is not None and kern.kind == SATURATING:
            params[f"alpha[{k}]"] = c.alpha
            if kern.memory_bound:
                params[f"p0[{k}]"] = kern.p0
    return params


def cmd_fleet(args, out) -> int:
    per_param: Dict[str, list] = {}
    seen = set()
    for path in args.models:
        model = _load(path)
        chip = model.chip_id or Path(path).stem
        if chip in seen:
            raise ModelFileError(f"{path}: chip id {chip!r} appears twice in the fleet")
        seen.add(chip)
        for name, value in model_parameters(model).items():
            per_param.setdefault(name, []).append((chip, value))
    samples = [fleet.FleetSample(p, tuple(v)) for p, v in sorted(per_param.items()) if len(v) >= 2]
    if not samples:
        raise UsageError("MODELS", "need at least two fitted models sharing parameters", "pass more model files")
    summaries, per_chip = fleet.fleet_summary(samples, args.sigmas)
    rows = [[s.parameter, s.count, fmt(s.mean), fmt(s.std), "" if s.cv is None else fmt(s.cv), ";".join(s.outliers)]
            for s in summaries]
    text = _csv_text(("parameter", "count", "mean", "std", "cv", "outliers"), rows)
    if args.histograms:
        bins = args.bins if args.bins == "auto" else int(args.bins)
        hrows = []
        for s in samples:
            h = fleet.histogram([v for _, v in s.values], bins)
            for i, (c, p) in enumerate(zip(h.counts, h.probabilities)):
                hrows.append([s.parameter, i, fmt(h.edges[i]), fmt(h.edges[i + 1]), int(c), repr(float(p))])
        atomic_write(args.histograms, _csv_text(("parameter", "bin", "lower", "upper", "count", "probability"), hrows))
    summary = [f"fleet of {len(seen)} chips, {len(samples)} parameters (outliers beyond {args.sigmas:g} sigma)"]
    if per_chip:
        for chip, params in per_chip.items():
            summary.append(f"  {chip}: outlier in {', '.join(params)}")
    else:
        summary.append("  no outliers")
    _emit(text, "\n".join(summary) + "\n", args.output, out)
    return 0


def _rel(pred: float, meas: float) -> float:
    return abs(pred - meas) / abs(meas)


def cmd_validate(args, out) -> int:
    model = _load(args.model)
    power = model.require_power()
    records = ingest_measurements(args.measurements, model.machine)
    if args.chip is not None:
        records = [r for r in records if r.chip_id == args.chip]
        if not records:
            raise UsageError("--chip", f"no measurements for chip {args.chip!r}", "check the chip_id column")
    rows, errors = [], {}
    for r in records:
        kernel = model.kernel(r.kernel)
        p = energy.predict(OperatingPoint(r.n, r.f_core, r.f_uncore), kernel, model.machine, power)
        e_meas = r.power / r.performance
        errs = (_rel(p.performance, r.performance), _rel(p.power, r.power), _rel(p.energy_per_work, e_meas))
        errors.setdefault(r.kernel, []).append(errs)
        scale = unit_scale(kernel.perf_unit)
        rows.append([r.chip_id, r.kernel, r.n, _ghz(r.f_core), _ghz(r.f_uncore),
                     fmt(r.performance / scale), fmt(p.performance / scale), fmt(errs[0]),
                     fmt(r.power), fmt(p.power), fmt(errs[1]),
                     fmt(e_meas), fmt(p.energy_per_work), fmt(errs[2])])
    header = ("chip_id", "kernel", "n", "f_core_ghz", "f_uncore_ghz",
              "measured_performance", "predicted_performance", "performance_rel_err",
              "measured_power_w", "predicted_power_w", "power_rel_err",
              "measured_energy_per_work_j", "predicted_energy_per_work_j", "energy_rel_err")
    summary = [f"relative model error over {len(records)} measurements (|pred - meas| / meas):"]
    for k, errs in sorted(errors.items()):
        for i, what in enumerate(("performance", "power", "energy")):
            col = [e[i] for e in errs]
            summary.append(f"  {k:<10} {what:<12} max {100 * max(col):.3f}%  mean {100 * sum(col) / len(col):.3f}%")
    _emit(_csv_text(header, rows), "\n".join(summary) + "\n", args.output, out)
    return 0


# -- parser ----------------------------------------------------------------------

def _cutoff(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecmpower", description="Runtime, power and energy models for multicore CPUs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit model parameters from measurements")
    p.add_argument("--setup", required=True, help="machine and kernel description (model file without power block)")
    p.add_argument("--measurements", required=True, help="measurement CSV")
    p.add_argument("-o", "--output", required=True, help="model file to write")
    p.add_argument("--chip", help="chip_id to fit when the CSV holds several chips")
    p.add_argument("--efficiency-cutoff", type=_cutoff, default=fitting.DEFAULT_EFFICIENCY_CUTOFF,
                   help="ignore points below this parallel efficiency when extrapolating baseline power (default 0.9)")
    p.add_argument("--breakpoint", default="auto", help="baseline breakpoint: auto, none, or a frequency in GHz")
    p.add_argument("--baseline-kernel", action="append", metavar="NAME",
                   help="kernel(s) used for baseline extrapolation (default: scalable kernels)")
    p.set_defaults(func=cmd_fit)

    def model_args(p):
        p.add_argument("--model", required=True, help="fitted model file")
        p.add_argument("--kernel", required=True, help="kernel name")
        p.add_argument("-o", "--output", help="write CSV here instead of standard output")

    p = sub.add_parser("predict", help="predict one operating point")
    model_args(p)
    p.add_argument("-n", "--cores", type=int, required=True, help="active cores")
    p.add_argument("--f-core", type=_positive, required=True, help="core clock [GHz]")
    p.add_argument("--f-uncore", type=_positive, help="Uncore clock [GHz] (machines with an independent Uncore)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("optimize", help="search the operating-point grid")
    model_args(p)
    p.add_argument("--objective", choices=energy.OBJECTIVES, default=energy.MIN_ENERGY)
    p.add_argument("--grid-step", type=_positive, help="frequency step [GHz] (default: machine step, 0.1)")
    p.add_argument("--cores", help="core counts to consider, e.g. 1-8 or 4,8 (default: all)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("zplot", help="energy vs performance along one swept parameter")
    model_args(p)
    p.add_argument("--sweep", choices=energy.SWEEP_PARAMETERS, required=True)
    p.add_argument("--values", help="comma-separated sweep values (default: full machine range)")
    p.add_argument("-n", "--cores", type=int, help="fixed core count (default: all cores)")
    p.add_argument("--f-core", type=_positive, help="fixed core clock [GHz] (default: maximum)")
    p.add_argument("--f-uncore", type=_positive, help="fixed Uncore clock [GHz] (default: maximum)")
    p.add_argument("--grid-step", type=_positive, help="frequency step [GHz] for frequency sweeps")
    p.set_defaults(func=cmd_zplot)

    p = sub.add_parser("fleet", help="parameter statistics across many fitted chips")
    p.add_argument("models", nargs="+", metavar="MODEL", help="fitted model files, one per chip")
    p.add_argument("--bins", default="auto", help="histogram bins: auto (ceil(sqrt(n))) or a count")
    p.add_argument("--histograms", help="write per-parameter histograms to this CSV")
    p.add_argument("--sigmas", type=_positive, default=fleet.OUTLIER_SIGMAS,
                   help="outlier threshold in standard deviations (default 2)")
    p.add_argument("-o", "--output", help="write the summary CSV here instead of standard output")
    p.set_defaults(func=cmd_fleet)

    p = sub.add_parser("validate", help="relative model error against measurements")
    p.add_argument("--model", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--chip", help="only validate this chip_id")
    p.add_argument("-o", "--output", help="write the per-point CSV here instead of standard output")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "bins", "auto") != "auto":
        try:
            if int(args.bins) < 1:
                raise ValueError
        except ValueError:
            sys.stderr.write(f"ecmpower fleet: error: --bins: invalid value {args.bins!r}\n"
                             "hint: use 'auto' or a positive integer\n")
            return 2
    try:
        return args.func(args, out)
    except UsageError as exc:
        sys.stderr.write(f"ecmpower {args.command}: error: {exc}\nhint: {exc.remedy}\n")
        return 2
    except MeasurementError as exc:
        sys.stderr.write(f"ecmpower {args.command}: invalid measurements: {exc}\n")
        return 1
    except (ModelFileError, fitting.FitError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"ecmpower {args.command}: error: {msg}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
