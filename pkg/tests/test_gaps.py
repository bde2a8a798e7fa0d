import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlin.errors import OrderingError, ParamError
from partlin.gaps import GapParams, check_condition, scalar_envelope_check
from partlin.spectrum import SpectralInterval


def pts(*vals):
    return [(v, v) for v in vals]


def test_condition3_passes_by_arithmetic():
    rep = check_condition(3, pts(1.0, -0.5, -1.0), GapParams(0.01, 0.01, 1, 3, 1, 3))
    b = rep.clause("b: n*hi_n - lo_n + (n+1)(eps+delta)")
    assert b.lhs == pytest.approx(3 * -1 - -1 + 4 * 0.02)
    assert rep.overall


def test_condition1_fails_and_names_clause_b():
    rep = check_condition(1, pts(0.5, -0.5, -1.0), GapParams(0.0, 0.0, 1, 3, 1, 3))
    assert not rep.overall
    (name,) = rep.failed()
    assert name.startswith("b:")
    assert rep.clause(name).lhs == pytest.approx(1.0)


def test_condition4_negative_top_passes():
    rep = check_condition(4, pts(-0.2, -0.5, -1.0), GapParams(0.0, 0.0, 1, 3, 3, 3))
    lhs = [c.lhs for c in rep.clauses if c.name.startswith("c:")]
    assert lhs == pytest.approx([-0.2, -2.0])
    assert rep.overall


def test_ordering_violations():
    with pytest.raises(OrderingError):
        check_condition(3, [(-1.0, -1.0), (-0.5, -0.5)], GapParams(0.0, 0.0))
    with pytest.raises(OrderingError):
        check_condition(3, [(0.0, 1.0), (0.5, 0.5)], GapParams(0.0, 0.0))
    with pytest.raises(OrderingError):
        check_condition(3, pts(-1.0), GapParams(0.0, 0.0))


def test_bad_params():
    with pytest.raises(ParamError):
        GapParams(-0.1, 0.0)
    with pytest.raises(ParamError):
        check_condition(1, pts(0.5, -1.0), GapParams(0.0, 0.0, 2, 2, 1, 2))
    with pytest.raises(ParamError):
        check_condition(4, pts(0.5, -1.0), GapParams(0.0, 0.0, 1, 1, 1, 2))


def test_report_serialises():
    rep = check_condition(2, pts(0.3, -1.0), GapParams(0.01, 0.0, 1, 2, 1, 2))
    d = rep.to_dict()
    assert d["overall"] == rep.overall
    assert all("lhs" in c for c in d["clauses"])


spectra = st.lists(st.floats(-3, 1), min_size=2, max_size=4, unique=True).map(
    lambda v: sorted(v, reverse=True)).filter(lambda v: min(np.diff(v[::-1])) > 1e-3)


@settings(max_examples=60, deadline=None)
@given(v=spectra, shift=st.floats(0.0, 0.5), cid=st.sampled_from([1, 2, 3]))
def test_larger_budget_never_helps(v, shift, cid):
    n = len(v)
    small = check_condition(cid, pts(*v), GapParams(0.0, 0.0, 1, n, 1, n))
    big = check_condition(cid, pts(*v), GapParams(shift, shift, 1, n, 1, n))
    if big.overall:
        assert small.overall


@settings(max_examples=60, deadline=None)
@given(v=spectra, down=st.floats(0.0, 1.0))
def test_condition3_monotone_in_bottom_rate(v, down):
    # pushing the bottom interval down while keeping the order only helps Condition 3
    n = len(v)
    p = GapParams(0.0, 0.0, 1, n, 1, n)
    base = check_condition(3, pts(*v), p)
    w = v[:-1] + [v[-1] - down]
    lower = check_condition(3, pts(*w), p)
    assert lower.clause("b: n*hi_n - lo_n + (n+1)(eps+delta)").lhs <= \
        base.clause("b: n*hi_n - lo_n + (n+1)(eps+delta)").lhs + 1e-12


def test_envelope_constant():
    assert scalar_envelope_check("-0.7", SpectralInterval(-0.7, -0.7), 0.05, 1.0, 30.0)


def test_envelope_sine():
    assert scalar_envelope_check("-2+sin(t)", SpectralInterval(-2, -2), 0.01, np.e ** 2, 60.0)


def test_envelope_violated():
    res = scalar_envelope_check("0", SpectralInterval(-1, -1), 0.1, 1.0, 30.0)
    assert not res
    assert res.worst_ratio > 1.0


def test_envelope_sine_needs_K():
    assert not scalar_envelope_check("-2+sin(t)", SpectralInterval(-2, -2), 0.01, 1.0, 60.0)
