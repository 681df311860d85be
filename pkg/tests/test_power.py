import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmpower.machine import OperatingPoint
from ecmpower.power import (BaselineCoeffs, BaselineSegment, CoreCoeffs, FrequencyRangeError, PowerParams,
                            UnknownKernelError, p_base, p_chip, p_core)
from ecmpower.synthetic import BDW_BASELINE, SNB_BASELINE, SNB_DGEMM

SNB = PowerParams(SNB_BASELINE, {"dgemm": SNB_DGEMM})


def test_p_base_snb():
    assert p_base(2.7, SNB_BASELINE) == pytest.approx(14.62 + 1.07 * 2.7 + 1.02 * 2.7 ** 2, rel=1e-15)
    assert p_base(2.7, SNB_BASELINE) == pytest.approx(24.94, abs=0.005)


def test_p_base_bdw_low_segment():
    assert p_base(1.2, BDW_BASELINE) == pytest.approx(27.68, abs=0.005)


def test_breakpoint_belongs_to_lower_segment():
    lo = BDW_BASELINE.segments[0]
    assert p_base(1.7, BDW_BASELINE) == lo(1.7)
    hi = BDW_BASELINE.segments[1]
    assert p_base(1.8, BDW_BASELINE) == hi(1.8)


def test_constant_baseline():
    b = BaselineCoeffs((BaselineSegment(3.0, 9.5, 0.0, 0.0),), f_min=1.0)
    assert {p_base(f, b) for f in (1.0, 1.7, 3.0)} == {9.5}


@pytest.mark.parametrize("f", [0.9, 3.0])
def test_p_base_out_of_range(f):
    with pytest.raises(FrequencyRangeError, match=r"1\.2"):
        p_base(f, SNB_BASELINE)


def test_segments_must_increase():
    with pytest.raises(ValueError):
        BaselineCoeffs((BaselineSegment(2.0, 1, 1, 1), BaselineSegment(1.5, 1, 1, 1)))
    with pytest.raises(ValueError):
        BaselineCoeffs(())


def test_p_core_snb_dgemm():
    assert p_core(2.7, 1.0, SNB_DGEMM) == pytest.approx(11.02, abs=0.005)


def test_unit_efficiency_and_zero_alpha_mean_no_damping():
    c = CoreCoeffs(1.0, 2.0, 3.0, alpha=1.7)
    assert p_core(2.0, 1.0, c) == 1.0 + 4.0 + 12.0
    c0 = CoreCoeffs(1.0, 2.0, 3.0, alpha=0.0)
    assert p_core(2.0, 0.3, c0) == 1.0 + 4.0 + 12.0


def test_only_dynamic_part_is_damped():
    c = CoreCoeffs(1.0, 2.0, 3.0, alpha=0.5)
    assert p_core(2.0, 0.25, c) == pytest.approx(1.0 + 16.0 * 0.5)


def test_p_core_errors():
    with pytest.raises(ValueError):
        p_core(2.0, 0.0, SNB_DGEMM)
    with pytest.raises(FrequencyRangeError):
        p_core(3.0, 1.0, SNB_DGEMM, f_range=(1.2, 2.7))


def test_p_chip_examples():
    assert p_chip(OperatingPoint(0, 2.7, 2.7), 1.0, SNB, "dgemm") == p_base(2.7, SNB_BASELINE)
    assert p_chip(OperatingPoint(8, 2.7, 2.7), 1.0, SNB, "dgemm") == pytest.approx(113.1, abs=0.05)
    assert p_chip(OperatingPoint(8, 1.4, 1.4), 1.0, SNB, "dgemm") == pytest.approx(47.3, abs=0.05)
    assert p_base(1.4, SNB_BASELINE) == pytest.approx(18.12, abs=0.005)
    assert p_core(1.4, 1.0, SNB_DGEMM) == pytest.approx(3.65, abs=0.005)


def test_unknown_kernel():
    with pytest.raises(UnknownKernelError):
        p_chip(OperatingPoint(1, 2.0, 2.0), 1.0, SNB, "graph500")


coef = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(coef, coef, coef, st.floats(0, 2), st.floats(0.05, 1.0), st.floats(1.2, 2.7), st.integers(0, 30))
def test_p_chip_affine_in_n(w0, w1, w2, alpha, eps, f, n):
    params = PowerParams(SNB_BASELINE, {"k": CoreCoeffs(w0, w1, w2, alpha)})
    d1 = p_chip(OperatingPoint(n + 1, f, f), eps, params, "k") - p_chip(OperatingPoint(n, f, f), eps, params, "k")
    d2 = p_chip(OperatingPoint(n + 2, f, f), eps, params, "k") - p_chip(OperatingPoint(n + 1, f, f), eps, params, "k")
    assert d1 == pytest.approx(d2, rel=1e-9, abs=1e-9)
    assert d1 == pytest.approx(p_core(f, eps, params.core("k")), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 5), st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 2),
       st.floats(0.01, 0.99), st.floats(1.2, 2.7))
def test_damping_strictly_reduces_power(w0, w1, w2, alpha, eps, f):
    c = CoreCoeffs(w0, w1, w2, alpha)
    assert p_core(f, eps, c) < p_core(f, 1.0, c)
