"""Parameter estimation for the power and multicore performance models.

Every fit returns its parameters together with a :class:`FitReport` listing
the points used, the points excluded (with reasons), the residuals and their
sum of squares.  The reported SSE is always recomputed from the returned
parameters, never taken from the solver.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from . import ecm
from .machine import SATURATING, SCALABLE, KernelSpec, MachineSpec, bandwidth_lookup
from .measurements import MeasurementRecord, measured_efficiencies
from .power import BaselineCoeffs, BaselineSegment, CoreCoeffs, PowerParams, p_base

DEFAULT_EFFICIENCY_CUTOFF = 0.90
ALPHA_GRID = tuple(i / 100 for i in range(201))  # [0, 2] at 0.01
BREAKPOINT_IMPROVEMENT = 4.0
INV_PHI = (math.sqrt(5) - 1) / 2


class FitError(ValueError):
    pass


class InsufficientDataError(FitError):
    pass


class DegenerateFitError(FitError):
    pass


class UnidentifiableError(FitError):
    pass


@dataclass
class FitReport:
    parameters: Dict[str, float]
    residuals: List[float]
    sse: float
    used: List[str]
    excluded: List[Tuple[str, str]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.residuals) != len(self.used):
            raise AssertionError("residual count must match the number of points used")

    def to_dict(self) -> dict:
        return {
            "parameters": dict(self.parameters),
            "sse": self.sse,
            "used": list(self.used),
            "residuals": list(self.residuals),
            "excluded": [{"point": p, "reason": r} for p, r in self.excluded],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitReport":
        return cls(parameters=dict(d["parameters"]), residuals=list(d["residuals"]), sse=d["sse"],
                   used=list(d["used"]), excluded=[(e["point"], e["reason"]) for e in d.get("excluded", [])],
                   notes=list(d.get("notes", [])))

    def summary(self, title: str = "") -> str:
        lines = [title] if title else []
        for k, v in self.parameters.items():
            lines.append(f"  {k:<14} {v: .6g}")
        lines.append(f"  SSE            {self.sse:.6g}  ({len(self.used)} points used, {len(self.excluded)} excluded)")
        for p, r in self.excluded:
            lines.append(f"    excluded {p}: {r}")
        for note in self.notes:
            lines.append(f"    note: {note}")
        return "\n".join(lines)


def _sse(residuals) -> float:
    return float(sum(r * r for r in residuals))


def _lstsq(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares via Householder QR; raises DegenerateFitError on rank loss."""
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise DegenerateFitError("design matrix is rank deficient")
    return np.linalg.solve(R, Q.T @ y)


# -- polynomial fits ---------------------------------------------------------

class QuadraticFit(NamedTuple):
    w0: float
    w1: float
    w2: float
    report: FitReport


def fit_quadratic(f: Sequence[float], y: Sequence[float],
                  labels: Optional[Sequence[str]] = None) -> QuadraticFit:
    """y = w0 + w1 f + w2 f^2 by least squares (QR, not normal equations)."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    if f.shape != y.shape or f.ndim != 1:
        raise ValueError("f and y must be 1-D sequences of equal length")
    distinct = len(set(f.tolist()))
    if distinct < 3:
        raise DegenerateFitError(f"quadratic fit needs >= 3 distinct frequencies, got {distinct}")
    w0, w1, w2 = (float(v) for v in _lstsq(np.column_stack([np.ones_like(f), f, f * f]), y))
    residuals = [float(yi - (w0 + w1 * fi + w2 * fi * fi)) for fi, yi in zip(f, y)]
    labels = list(labels) if labels is not None else [f"f={fi:g}" for fi in f]
    report = FitReport({"W0": w0, "W1": w1, "W2": w2}, residuals, _sse(residuals), labels)
    return QuadraticFit(w0, w1, w2, report)


class PiecewiseFit(NamedTuple):
    baseline: BaselineCoeffs
    report: FitReport


def _split(f: np.ndarray, bp: float):
    lower = f <= bp + 1e-9
    return lower, ~lower


def fit_piecewise_quadratic(f: Sequence[float], y: Sequence[float],
                            breakpoint: Union[str, float, None] = "auto",
                            f_range: Optional[Sequence[float]] = None,
                            min_points: int = 3,
                            improvement: float = BREAKPOINT_IMPROVEMENT) -> PiecewiseFit:
    """Quadratic, or two quadratics split at a breakpoint (boundary in the lower piece).

    With ``breakpoint="auto"`` every interior frequency is tried; the split
    with the smallest total SSE is kept only if it beats the single quadratic
    by at least ``improvement`` times.  ``breakpoint=None`` forces one segment.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = float(f.min()) if f_range is None else min(float(f_range[0]), float(f.min()))
    hi = float(f.max()) if f_range is None else max(float(f_range[1]), float(f.max()))
    labels = [f"f={fi:g}" for fi in f]

    def segments_for(bp):
        lower, upper = _split(f, bp)
        fl = fit_quadratic(f[lower], y[lower])
        fu = fit_quadratic(f[upper], y[upper])
        return fl, fu

    def assemble(bp, fl, fu, notes):
        base = BaselineCoeffs((BaselineSegment(bp, fl.w0, fl.w1, fl.w2),
                               BaselineSegment(hi, fu.w0, fu.w1, fu.w2)), f_min=lo)
        residuals = [float(yi - base.segment_for(fi)(fi)) for fi, yi in zip(f, y)]
        params = {"breakpoint": bp, "W0_low": fl.w0, "W1_low": fl.w1, "W2_low": fl.w2,
                  "W0_high": fu.w0, "W1_high": fu.w1, "W2_high": fu.w2}
        return PiecewiseFit(base, FitReport(params, residuals, _sse(residuals), labels, notes=notes))

    def single(notes):
        q = fit_quadratic(f, y)
        base = BaselineCoeffs((BaselineSegment(hi, q.w0, q.w1, q.w2),), f_min=lo)
        residuals = [float(yi - base.segment_for(fi)(fi)) for fi, yi in zip(f, y)]
        return PiecewiseFit(base, FitReport({"W0": q.w0, "W1": q.w1, "W2": q.w2}, residuals,
                                            _sse(residuals), labels, notes=notes))

    def admissible(bp):
        lower, upper = _split(f, bp)
        return (lower.sum() >= min_points and upper.sum() >= min_points
                and len(set(f[lower].tolist())) >= 3 and len(set(f[upper].tolist())) >= 3)

    if breakpoint is None:
        return single([])
    if breakpoint != "auto":
        bp = float(breakpoint)
        if not admissible(bp):
            raise DegenerateFitError(
                f"breakpoint {bp:g} GHz leaves fewer than {min_points} points or 3 distinct frequencies on one side")
        fl, fu = segments_for(bp)
        return assemble(bp, fl, fu, [])

    candidates = [c for c in sorted(set(f.tolist()))[:-1] if admissible(c)]
    if not candidates:
        return single(["no admissible breakpoint; single segment used"])
    one = single([])
    best = None
    for bp in candidates:
        fl, fu = segments_for(bp)
        sse = fl.report.sse + fu.report.sse
        if best is None or sse < best[0]:
            best = (sse, bp, fl, fu)
    sse_two, bp, fl, fu = best
    floor = 1e-20 * float(np.dot(y, y))
    if one.report.sse > floor and sse_two * improvement <= one.report.sse:
        return assemble(bp, fl, fu, [f"breakpoint {bp:g} GHz: SSE {sse_two:.4g} vs {one.report.sse:.4g} single"])
    if one.report.sse <= floor:
        one.report.notes.append("single segment fits to rounding error; no breakpoint needed")
    else:
        one.report.notes.append(f"best split at {bp:g} GHz (SSE {sse_two:.4g}) not {improvement:g}x better "
                                f"than single segment (SSE {one.report.sse:.4g})")
    return one


# -- baseline extrapolation ---------------------------------------------------

class BaselineExtrapolation(NamedTuple):
    intercept: float
    slope: float
    report: FitReport


def _require_single(records, what):
    keys = {(r.chip_id, r.kernel) for r in records}
    if len(keys) > 1:
        raise FitError(f"{what} expects records of one chip and one kernel, got {sorted(keys)}")


def extrapolate_baseline(records: Sequence[MeasurementRecord],
                         efficiency_cutoff: float = DEFAULT_EFFICIENCY_CUTOFF) -> BaselineExtrapolation:
    """Extrapolate chip power at fixed clocks to zero active cores.

    Records whose measured parallel efficiency is below ``efficiency_cutoff``
    are excluded, as are records lacking a single-core reference.
    """
    if not records:
        raise InsufficientDataError("no records")
    _require_single(records, "baseline extrapolation")
    settings = {(r.f_core, r.f_uncore) for r in records}
    if len(settings) > 1:
        raise FitError(f"baseline extrapolation expects one clock setting, got {sorted(settings)}")
    eps = measured_efficiencies(records)
    used, excluded = [], []
    for r, e in zip(records, eps):
        if e is None:
            excluded.append((r.label, "no single-core reference for parallel efficiency"))
        elif e < efficiency_cutoff:
            excluded.append((r.label, f"parallel efficiency {e:.3f} < {efficiency_cutoff:g}"))
        else:
            used.append(r)
    if len({r.n for r in used}) < 2:
        detail = "; ".join(f"{p}: {why}" for p, why in excluded) or "none excluded"
        raise InsufficientDataError(f"need records at >= 2 distinct core counts after exclusion ({detail})")
    n = np.array([r.n for r in used], dtype=float)
    p = np.array([r.power for r in used], dtype=float)
    a, b = (float(v) for v in _lstsq(np.column_stack([np.ones_like(n), n]), p))
    residuals = [float(pi - (a + b * ni)) for ni, pi in zip(n, p)]
    report = FitReport({"P_base": a, "slope": b}, residuals, _sse(residuals), [r.label for r in used], excluded)
    return BaselineExtrapolation(a, b, report)


# -- core power ---------------------------------------------------------------

class CoreFit(NamedTuple):
    coeffs: CoreCoeffs
    report: FitReport


def _per_core_power(records, baseline):
    return np.array([(r.power - p_base(r.f_uncore, baseline)) / r.n for r in records])


def fit_core_params(records: Sequence[MeasurementRecord], baseline: BaselineCoeffs,
                    alpha: float = 0.0, eps: Optional[Sequence[float]] = None) -> CoreFit:
    """Per-core power (P - P_base(f_uncore)) / n as a quadratic in f_core.

    With ``alpha > 0`` the dynamic basis functions are scaled by the given
    parallel efficiencies raised to ``alpha``; the fit stays linear.
    """
    if not records:
        raise InsufficientDataError("no records")
    _require_single(records, "core power fit")
    f = np.array([r.f_core for r in records], dtype=float)
    if len(set(f.tolist())) < 3:
        raise DegenerateFitError(f"core power fit needs >= 3 distinct core frequencies, got {len(set(f.tolist()))}")
    if alpha != 0.0:
        if eps is None:
            raise ValueError("alpha > 0 needs parallel efficiencies")
        d = np.array([min(1.0, e) ** alpha for e in eps], dtype=float)
    else:
        d = np.ones_like(f)
    y = _per_core_power(records, baseline)
    w0, w1, w2 = (float(v) for v in _lstsq(np.column_stack([np.ones_like(f), f * d, f * f * d]), y))
    coeffs = CoreCoeffs(w0, w1, w2, alpha)
    residuals = [float(yi - (w0 + (w1 * fi + w2 * fi * fi) * di)) for fi, yi, di in zip(f, y, d)]
    report = FitReport({"W0": w0, "W1": w1, "W2": w2, "alpha": alpha}, residuals, _sse(residuals),
                       [r.label for r in records])
    return CoreFit(coeffs, report)


class AlphaFit(NamedTuple):
    alpha: float
    report: FitReport


def fit_alpha(records: Sequence[MeasurementRecord], baseline: BaselineCoeffs, core: CoreCoeffs,
              eps: Sequence[float]) -> AlphaFit:
    """Damping exponent by grid search over [0, 2] in steps of 0.01.

    Uses measured efficiencies; minimizes the SSE of predicted chip power.
    """
    if len(eps) != len(records):
        raise ValueError("need one efficiency per record")
    damped = [r for r, e in zip(records, eps) if e < 1.0]
    if len(damped) < 2:
        raise UnidentifiableError("alpha unidentifiable: fewer than 2 records with parallel efficiency < 1")
    for r in records:
        if core.dynamic(r.f_core) <= 0:
            raise UnidentifiableError(
                f"alpha unidentifiable: dynamic core power {core.dynamic(r.f_core):.4g} W <= 0 at {r.f_core:g} GHz")
    base = [p_base(r.f_uncore, baseline) for r in records]

    def residuals(a):
        return [r.power - (b + r.n * (core.w0 + core.dynamic(r.f_core) * min(1.0, e) ** a))
                for r, e, b in zip(records, eps, base)]

    best = min(ALPHA_GRID, key=lambda a: (_sse(residuals(a)), a))
    res = [float(v) for v in residuals(best)]
    report = FitReport({"alpha": best}, res, _sse(res), [r.label for r in records])
    return AlphaFit(best, report)


def fit_core_and_alpha(records: Sequence[MeasurementRecord], baseline: BaselineCoeffs,
                       eps: Sequence[float]) -> CoreFit:
    """Joint core coefficients and alpha: profile the linear fit over the alpha grid."""
    damped = sum(1 for e in eps if e < 1.0)
    if damped < 2:
        fit = fit_core_params(records, baseline)
        fit.report.notes.append("alpha unidentifiable (no damped records); alpha = 0")
        return fit
    best = None
    for a in ALPHA_GRID:
        fit = fit_core_params(records, baseline, alpha=a, eps=eps)
        if best is None or fit.report.sse < best.report.sse:
            best = fit
    return best


# -- latency penalty ----------------------------------------------------------

def golden_section_minimize(func: Callable[[float], float], a: float, b: float,
                            tol: float = 1e-6) -> float:
    """Minimizer of a unimodal ``func`` on [a, b] to within ``tol``."""
    if b < a:
        a, b = b, a
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = func(d)
    return (a + b) / 2


class Curve(NamedTuple):
    """Scaling measurements at one clock setting plus the ECM inputs valid there."""

    records: Sequence[MeasurementRecord]
    ecm: ecm.EcmContributions
    pi_bw: float


class P0Fit(NamedTuple):
    p0: float
    report: FitReport


P0_SCAN_POINTS = 200
P0_TOL = 1e-6


def fit_p0_curves(curves: Sequence[Curve], below_saturation: float = 0.99) -> P0Fit:
    """Latency penalty p0 shared by several scaling curves.

    A coarse scan over [0, 10 * max T_ECM] brackets the minimum of the SSE,
    then golden-section search refines it.  A point counts as below saturation
    when its measured performance is under ``below_saturation * pi_BW``.
    """
    records = [r for c in curves for r in c.records]
    if len({r.n for r in records}) < 3:
        raise InsufficientDataError("p0 fit needs records at >= 3 core counts")
    if not any(r.performance < below_saturation * c.pi_bw for c in curves for r in c.records):
        raise UnidentifiableError("p0 unidentifiable: every measured point is saturated")
    for c in curves:
        if c.ecm.t_l3_mem == 0:
            raise UnidentifiableError("p0 unidentifiable: kernel has no memory traffic")
    n_max = max(r.n for r in records)

    def residuals(p0):
        out = []
        for c in curves:
            u = ecm.utilization_series(n_max, c.ecm.t_ecm, c.ecm.t_l3_mem, p0)
            out.extend(r.performance - u[r.n - 1] * c.pi_bw for r in c.records)
        return out

    def sse(p0):
        return _sse(residuals(p0))

    hi = 10.0 * max(c.ecm.t_ecm for c in curves)
    grid = [hi * i / P0_SCAN_POINTS for i in range(P0_SCAN_POINTS + 1)]
    values = [sse(x) for x in grid]
    i = min(range(len(grid)), key=lambda k: (values[k], k))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    x = golden_section_minimize(sse, a, b, tol=P0_TOL)
    candidates = [(sse(x), x), (values[i], grid[i]), (values[0], 0.0)]
    best_sse, p0 = min(candidates, key=lambda t: (t[0], t[1]))
    res = [float(v) for v in residuals(p0)]
    report = FitReport({"p0": p0}, res, _sse(res), [r.label for c in curves for r in c.records])
    return P0Fit(p0, report)


def fit_p0(records: Sequence[MeasurementRecord], ecm_contrib: ecm.EcmContributions, pi_bw: float) -> P0Fit:
    return fit_p0_curves([Curve(records, ecm_contrib, pi_bw)])


# -- whole-model pipeline -----------------------------------------------------

@dataclass
class ModelFit:
    power: PowerParams
    kernels: Dict[str, KernelSpec]
    reports: Dict[str, FitReport]


def _group(records, key):
    groups = defaultdict(list)
    for r in records:
        groups[key(r)].append(r)
    return dict(sorted(groups.items()))


def kernel_curves(records: Sequence[MeasurementRecord], kernel: KernelSpec,
                  machine: MachineSpec) -> List[Curve]:
    """Split a saturating kernel's records by clock setting and attach ECM inputs."""
    if machine.bandwidth is None:
        raise FitError(f"machine {machine.name} has no bandwidth table; cannot fit p0 for {kernel.name!r}")
    curves = []
    for (fc, fu), recs in _group(records, lambda r: (r.f_core, r.f_uncore)).items():
        bw = bandwidth_lookup(fc, fu, machine.bandwidth)
        c = kernel.ecm.with_l3_mem(ecm.memory_cycles(kernel.bytes_per_unit, bw, fc))
        curves.append(Curve(sorted(recs, key=lambda r: r.n), c,
                            ecm.bandwidth_ceiling(kernel.bytes_per_unit, bw, c.work_per_unit)))
    return curves


def fit_model(records: Sequence[MeasurementRecord], machine: MachineSpec,
              kernels: Mapping[str, KernelSpec],
              efficiency_cutoff: float = DEFAULT_EFFICIENCY_CUTOFF,
              breakpoint: Union[str, float, None] = "auto",
              baseline_kernels: Optional[Sequence[str]] = None) -> ModelFit:
    """Fit baseline, per-kernel core power, alpha and p0 for one chip.

    The baseline is extrapolated from ``baseline_kernels`` (default: all
    scalable kernels with data, otherwise every kernel).
    """
    chips = sorted({r.chip_id for r in records})
    if len(chips) != 1:
        raise FitError(f"records must come from exactly one chip, got {chips or 'none'}")
    unknown = sorted({r.kernel for r in records} - set(kernels))
    if unknown:
        raise FitError(f"measurements mention undescribed kernel(s): {', '.join(unknown)}")
    by_kernel = _group(records, lambda r: r.kernel)
    if baseline_kernels is None:
        baseline_kernels = [k for k in by_kernel if kernels[k].kind == SCALABLE] or list(by_kernel)
    missing = [k for k in baseline_kernels if k not in by_kernel]
    if missing:
        raise FitError(f"no records for baseline kernel(s): {', '.join(missing)}")

    reports: Dict[str, FitReport] = {}
    pts_f, pts_p, labels, excluded = [], [], [], []
    for k in baseline_kernels:
        for (fc, fu), recs in _group(by_kernel[k], lambda r: (r.f_core, r.f_uncore)).items():
            try:
                ext = extrapolate_baseline(recs, efficiency_cutoff)
            except InsufficientDataError as exc:
                excluded.append((f"{k} f_core={fc:g} f_uncore={fu:g}", str(exc)))
                continue
            pts_f.append(fu)
            pts_p.append(ext.intercept)
            labels.append(f"{k} f_core={fc:g} f_uncore={fu:g}")
            excluded.extend(ext.report.excluded)
    if not pts_f:
        raise InsufficientDataError("no clock setting allowed a baseline extrapolation")
    unc = machine.effective_uncore_range
    base_fit = fit_piecewise_quadratic(pts_f, pts_p, breakpoint, f_range=(unc.f_min, unc.f_max))
    base_fit.report.used[:] = labels
    base_fit.report.excluded.extend(excluded)
    baseline = base_fit.baseline
    reports["baseline"] = base_fit.report

    core: Dict[str, CoreCoeffs] = {}
    fitted_kernels = dict(kernels)
    for name, recs in by_kernel.items():
        kernel = kernels[name]
        if kernel.kind == SATURATING and kernel.memory_bound:
            pf = fit_p0_curves(kernel_curves(recs, kernel, machine))
            reports[f"p0:{name}"] = pf.report
            fitted_kernels[name] = replace(kernel, p0=pf.p0)
        if kernel.kind == SCALABLE:
            cf = fit_core_params(recs, baseline)
        else:
            eps = measured_efficiencies(recs)
            keep = [(r, e) for r, e in zip(recs, eps) if e is not None]
            dropped = [(r.label, "no single-core reference for parallel efficiency")
                       for r, e in zip(recs, eps) if e is None]
            cf = fit_core_and_alpha([r for r, _ in keep], baseline, [e for _, e in keep])
            cf.report.excluded.extend(dropped)
        core[name] = cf.coeffs
        reports[f"core:{name}"] = cf.report
    return ModelFit(PowerParams(baseline, core), fitted_kernels, reports)
