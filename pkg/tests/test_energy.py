import math

import pytest

from ecmpower import ecm
from ecmpower.energy import (MAX_PERFORMANCE, MIN_EDP, MIN_ENERGY, AnalyticFailureError, ConfigurationError,
                             NEGATIVE_POWER, PredictionPoint, best_point, evaluate_grid, f_opt, optimize, predict,
                             zplot_series)
from ecmpower.machine import BandwidthTable, ExtrapolationError, OperatingPoint, bandwidth_lookup
from ecmpower.power import BaselineSegment, CoreCoeffs, PowerParams, p_chip
from ecmpower.synthetic import SNB_BASELINE, SNB_DGEMM, bdw_model, snb_model

SNB = snb_model()
BDW = bdw_model()
SEG = SNB_BASELINE.segments[0]


def energy_scalable(f, n, seg, core):
    # runtime ~ 1/f; constant factors drop out of the argmin
    return (seg(f) + n * (core.w0 + core.w1 * f + core.w2 * f * f)) / f


def test_f_opt_snb_dgemm():
    assert f_opt(8, SEG, SNB_DGEMM).raw == pytest.approx(1.408, abs=5e-4)
    assert f_opt(4, SEG, SNB_DGEMM).raw == pytest.approx(1.696, abs=5e-4)


def test_f_opt_reduces_to_simple_form():
    seg = BaselineSegment(3.0, 12.0, 0.5, 0.0)
    core = CoreCoeffs(0.0, 0.3, 2.0)
    assert f_opt(4, seg, core).raw == pytest.approx(math.sqrt(12.0 / (4 * 2.0)), rel=1e-15)


def test_f_opt_clamping_reports_both():
    r = f_opt(1, SEG, SNB_DGEMM, (1.2, 2.3))
    assert r.raw > 2.3 and r.clamped == 2.3 and r.was_clamped
    r = f_opt(8, SEG, SNB_DGEMM, (1.2, 2.7))
    assert not r.was_clamped


def test_f_opt_analytic_failure():
    with pytest.raises(AnalyticFailureError, match="grid optimizer"):
        f_opt(2, BaselineSegment(3.0, 1.0, 0.0, -1.0), CoreCoeffs(0.0, 0.0, 0.1))


@pytest.mark.parametrize("n", [1, 4, 8, 16])
def test_f_opt_stationarity(n):
    fo = f_opt(n, SEG, SNB_DGEMM).raw
    h = 1e-3
    d = (energy_scalable(fo + h, n, SEG, SNB_DGEMM) - energy_scalable(fo - h, n, SEG, SNB_DGEMM)) / (2 * h)
    assert abs(d) < 1e-6 * energy_scalable(fo, n, SEG, SNB_DGEMM) / fo


def test_energy_saving_at_optimum():
    hi = predict(OperatingPoint(8, 2.7, 2.7), SNB.kernels["dgemm"], SNB.machine, SNB.power)
    lo = predict(OperatingPoint(8, 1.4, 1.4), SNB.kernels["dgemm"], SNB.machine, SNB.power)
    assert 1 - lo.energy_per_work / hi.energy_per_work == pytest.approx(0.193, abs=0.001)
    assert 1 - lo.performance / hi.performance == pytest.approx(1 - 1.4 / 2.7, rel=1e-12)


def test_prediction_identities_on_grid():
    for model in (SNB, BDW):
        for name, k in model.kernels.items():
            for p in evaluate_grid(k, model.machine, model.power, grid_step=0.3):
                assert p.energy_per_work * p.performance == pytest.approx(p.power, rel=1e-15)
                assert p.edp_density == p.energy_per_work / p.performance
                if model.machine.slaved:
                    assert p.op.f_uncore == p.op.f_core


def test_doubling_performance_halves_energy():
    a = PredictionPoint(OperatingPoint(1, 2, 2), 10.0, 50.0, 5.0, 0.5)
    assert 50.0 / 20.0 == a.energy_per_work / 2


def test_power_matches_power_model_with_modeled_efficiency():
    k = SNB.kernels["stream"]
    op = OperatingPoint(6, 2.0, 2.0)
    p = predict(op, k, SNB.machine, SNB.power)
    assert 0 < p.efficiency < 1
    assert p.power == p_chip(op, p.efficiency, SNB.power, "stream")


def test_negative_power_is_flagged_not_clamped():
    params = PowerParams(SNB.power.baseline, {"dgemm": CoreCoeffs(-30.0, 0.0, 0.0), "stream": SNB_DGEMM})
    p = predict(OperatingPoint(8, 1.2, 1.2), SNB.kernels["dgemm"], SNB.machine, params)
    assert p.power < 0 and NEGATIVE_POWER in p.warnings


def test_min_energy_matches_f_opt_within_one_step():
    best = optimize(SNB.kernels["dgemm"], SNB.machine, SNB.power, MIN_ENERGY, cores=[8])
    assert abs(best.op.f_core - f_opt(8, SEG, SNB_DGEMM).raw) <= 0.1 + 1e-9


@pytest.mark.parametrize("model", [SNB, BDW], ids=["snb", "bdw"])
def test_max_performance_scalable(model):
    best = optimize(model.kernels["dgemm"], model.machine, model.power, MAX_PERFORMANCE)
    m = model.machine
    assert best.op.n == m.n_cores and best.op.f_core == m.core_range.f_max
    assert best.op.f_uncore == m.effective_uncore_range.f_max or best.performance == pytest.approx(
        predict(OperatingPoint(m.n_cores, m.core_range.f_max, m.effective_uncore_range.f_max),
                model.kernels["dgemm"], m, model.power).performance, rel=1e-15)


def _n_sat(model, fc, fu):
    k, m = model.kernels["stream"], model.machine
    bw = bandwidth_lookup(fc, fu, m.bandwidth)
    c = k.ecm.with_l3_mem(ecm.memory_cycles(k.bytes_per_unit, bw, fc))
    s = ecm.ScalingParams(k.p0, m.n_cores, ecm.bandwidth_ceiling(k.bytes_per_unit, bw, c.work_per_unit), fc)
    return ecm.saturation_core_count(c, s)


def test_min_edp_at_saturation_snb_stream_full_clock():
    best = optimize(SNB.kernels["stream"], SNB.machine, SNB.power, MIN_EDP, cores=range(1, 9))
    at_max = best_point([p for p in evaluate_grid(SNB.kernels["stream"], SNB.machine, SNB.power)
                         if p.op.f_core == 2.7], MIN_EDP)
    assert at_max.op.n == _n_sat(SNB, 2.7, 2.7) == 4
    assert best.edp_density <= at_max.edp_density


@pytest.mark.parametrize("model", [SNB, BDW], ids=["snb", "bdw"])
def test_min_edp_never_beyond_saturation(model):
    # utilization approaches 1 smoothly, so a count short of n_sat can already win on EDP;
    # cores beyond n_sat only add power
    k, m = model.kernels["stream"], model.machine
    for fc in m.core_range.grid():
        for fu in ([fc] if m.slaved else m.uncore_range.grid(0.4)):
            n_sat = _n_sat(model, fc, fu)
            if n_sat is None:
                continue
            pts = [predict(OperatingPoint(n, fc, fu), k, m, model.power) for n in range(1, m.n_cores + 1)]
            assert best_point(pts, MIN_EDP).op.n <= n_sat


@pytest.mark.parametrize("model", [SNB, BDW], ids=["snb", "bdw"])
@pytest.mark.parametrize("kernel", ["dgemm", "stream"])
def test_optimizer_exhaustive_and_edp_ordering(model, kernel):
    k = model.kernels[kernel]
    points = evaluate_grid(k, model.machine, model.power)
    res = {obj: optimize(k, model.machine, model.power, obj) for obj in (MIN_ENERGY, MAX_PERFORMANCE, MIN_EDP)}
    assert all(res[MIN_ENERGY].energy_per_work <= p.energy_per_work for p in points)
    assert all(res[MAX_PERFORMANCE].performance >= p.performance for p in points)
    assert all(res[MIN_EDP].edp_density <= p.edp_density for p in points)
    assert res[MIN_EDP].edp_density <= res[MIN_ENERGY].edp_density
    assert res[MIN_EDP].edp_density <= res[MAX_PERFORMANCE].edp_density


def test_tie_break_is_order_independent():
    pts = [PredictionPoint(OperatingPoint(n, f, f), 1.0, 1.0, 1.0, 1.0) for n in (3, 1, 2) for f in (2.0, 1.5)]
    for seq in (pts, list(reversed(pts))):
        assert best_point(seq, MIN_ENERGY).op == OperatingPoint(1, 1.5, 1.5)


def test_empty_grid_and_bad_objective():
    with pytest.raises(ConfigurationError):
        best_point([], MIN_ENERGY)
    with pytest.raises(ConfigurationError):
        optimize(SNB.kernels["dgemm"], SNB.machine, SNB.power, "fastest")


def test_zplot_hook_shape_snb_stream():
    series = zplot_series(SNB.kernels["stream"], SNB.machine, SNB.power, {"n": range(1, 9), "f_core": [2.7]})
    e = [p.energy_per_work for p in series]
    assert [p.op.n for p in series] == list(range(1, 9))
    k = SNB.kernels["stream"]
    bw = bandwidth_lookup(2.7, 2.7, SNB.machine.bandwidth)
    c = k.ecm.with_l3_mem(ecm.memory_cycles(k.bytes_per_unit, bw, 2.7))
    n_sat = ecm.saturation_core_count(c, ecm.ScalingParams(k.p0, 8, ecm.bandwidth_ceiling(256.0, bw, 16.0), 2.7))
    i_min = e.index(min(e))
    assert 0 < i_min and i_min + 1 <= n_sat
    assert all(a > b for a, b in zip(e[:i_min], e[1:i_min + 1]))
    assert all(a < b for a, b in zip(e[n_sat - 1:], e[n_sat:]))


def test_zplot_single_point():
    assert len(zplot_series(SNB.kernels["dgemm"], SNB.machine, SNB.power, {"n": [4]})) == 1


def test_zplot_uncore_sweep_scalable_constant_performance():
    s = zplot_series(BDW.kernels["dgemm"], BDW.machine, BDW.power,
                     {"f_core": [1.2], "f_uncore": BDW.machine.uncore_range.grid()})
    perf = {p.performance for p in s}
    assert len(perf) == 1
    e = [p.energy_per_work for p in s]
    assert e == sorted(e)


def test_zplot_rejects_two_parameter_sweep():
    with pytest.raises(ConfigurationError, match="only one parameter"):
        zplot_series(SNB.kernels["dgemm"], SNB.machine, SNB.power, {"n": [1, 2], "f_core": [1.2, 1.3]})
    with pytest.raises(ConfigurationError, match="slaved"):
        zplot_series(SNB.kernels["dgemm"], SNB.machine, SNB.power, {"f_uncore": [1.2, 1.3]})


def test_bandwidth_lookup_contract():
    t = BandwidthTable(((1.2, 1.2, 40.0), (2.2, 2.2, 60.0)), "f_core")
    assert bandwidth_lookup(1.2, 1.2, t) == 40.0
    assert bandwidth_lookup(1.7, 1.7, t) == pytest.approx(50.0, rel=1e-14)
    with pytest.raises(ExtrapolationError):
        bandwidth_lookup(1.1, 1.1, t)
    with pytest.raises(ExtrapolationError):
        bandwidth_lookup(2.3, 2.3, t)


def test_uncore_axis_ignores_core_clock():
    t = BDW.machine.bandwidth
    assert bandwidth_lookup(1.2, 2.0, t) == bandwidth_lookup(2.3, 2.0, t)
    with pytest.raises(ValueError):
        BandwidthTable(((1.2, 1.2, 40.0), (1.2, 1.2, 41.0)))
