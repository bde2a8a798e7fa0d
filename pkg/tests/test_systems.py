import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlin.errors import ParseError
from partlin.fields import FuncTerm, Poly
from partlin.ode import flow, variational_solution
from partlin.systems import (CouplingQ, PartiallyLinearSystem, PerturbationP, check_flat_invariance,
                             check_perturbation_bounds, derivative_growth_report, flow_partial,
                             load_system, system_from_dict, system_to_dict)


def closed_form_example():
    # a = (-1, -2), p_1 = 0, p_2 = x_1
    return PartiallyLinearSystem(["-1", "-2"], PerturbationP([None, Poly([(1.0, (1,))], 1)]))


def test_closed_form_example():
    x = flow_partial(closed_form_example(), 1.0, 0.0, np.array([1.0, 1.0]))
    assert x[1] == pytest.approx(math.exp(-2) * math.exp(1 - math.exp(-1)), rel=1e-10)
    assert x[0] == pytest.approx(math.exp(-1), rel=1e-10)


def test_backward_closed_form():
    sys = closed_form_example()
    fwd = flow_partial(sys, 2.0, 0.0, np.array([1.0, 1.0]))
    np.testing.assert_allclose(flow_partial(sys, 0.0, 2.0, fwd), [1.0, 1.0], rtol=1e-9)


def test_pn_zero_gives_scalar_transition():
    sys = PartiallyLinearSystem(["-0.5", "-1+sin(t)"], PerturbationP([Poly([(0.3, (2,))], 1), None]))
    x = flow_partial(sys, 3.0, 0.0, np.array([0.2, 0.7]))
    assert x[1] == pytest.approx(0.7 * math.exp(-3 + 1 - math.cos(3)), rel=1e-9)


def test_flat_start_and_matches_full_integration():
    sys = closed_form_example()
    x = flow_partial(sys, 2.0, 0.0, np.array([0.4, 0.0]))
    assert x[1] == 0.0
    np.testing.assert_allclose(x, flow(sys, 0.0, 2.0, np.array([0.4, 0.0])), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 3), st.floats(-3, 3))
def test_linearity_in_last_coordinate(x1, x2, t, c):
    sys = PartiallyLinearSystem(["-0.3", "-1"], PerturbationP([Poly([(0.2, (2,))], 1),
                                                             Poly([(0.5, (1,))], 1)]))
    a = flow_partial(sys, t, 0.0, np.array([x1, c * x2]))
    b = flow_partial(sys, t, 0.0, np.array([x1, x2]))
    assert a[1] == pytest.approx(c * b[1], rel=1e-9, abs=1e-14)


def test_leading_block_independent_of_last():
    sys = PartiallyLinearSystem(["-0.3", "-0.8", "-1"],
                                PerturbationP([Poly([(0.2, (1, 1))], 2), Poly([(-0.1, (2, 0))], 2),
                                               Poly([(0.5, (1, 0))], 2)]))
    phi = variational_solution(sys, 0.0, 3.0, np.array([0.2, -0.1, 0.3]))
    assert np.max(np.abs(phi[:2, 2])) < 1e-12


def test_flat_invariance_with_coupling():
    sys = PartiallyLinearSystem(["-0.3", "-1"], PerturbationP([None, None]),
                                CouplingQ([Poly([(0.7, (1,))], 1)], 1))
    rep = check_flat_invariance(sys, 1)
    assert rep.passed and rep.max_deviation[0] == 0.0


def test_perturbation_bounds():
    zero = check_perturbation_bounds(PerturbationP([None, None]), 1.0, delta=0.1)
    assert zero.passed and zero.max_abs == 0 and zero.max_jac_norm == 0
    p = PerturbationP([FuncTerm(lambda t, x: 0.1 * np.sin(x[0]), 1), None])
    rep = check_perturbation_bounds(p, 1.0, delta=0.1)
    assert rep.max_abs <= 0.1
    assert rep.max_jac_norm == pytest.approx(0.1, rel=1e-3)
    assert rep.failed_clauses == ["Jacobian bound <= delta/(2K)"]


def test_growth_linear_system():
    sys = PartiallyLinearSystem(["-0.5", "-1"])
    rows = derivative_growth_report(sys, 2, 0.0, 10.0, np.array([0.1, 0.1]), -0.5, -1.0)
    first = {g.component: g for g in rows if g.order == 1}
    assert first["leading"].slope == pytest.approx(-0.5, abs=1e-6)
    assert first["last"].slope == pytest.approx(-1.0, abs=1e-6)
    assert all(g.identically_zero for g in rows if g.order == 2)


def test_growth_slopes_example():
    sys = PartiallyLinearSystem(["-0.5", "-1"],
                                PerturbationP([None, FuncTerm(lambda t, x: 0.05 * np.sin(x[0]), 1)]))
    rows = derivative_growth_report(sys, 1, 0.0, 10.0, np.array([0.1, 0.1]), -0.5, -1.0,
                                    eps=0.01, delta=0.05)
    last = next(g for g in rows if g.component == "last")
    assert last.within and last.slope <= -1 + 0.06 + 0.1


def test_json_round_trip(tmp_path):
    d = {"n": 3, "diag": ["-0.2", "-1+0.1*sin(t)", "-2"],
         "p": [{"row": 2, "poly": [{"coef": "0.5", "powers": [1, 0]}]},
               {"row": 3, "poly": [{"coef": "cos(t)", "powers": [0, 1]}]}],
         "q": {"l": 2, "b": [{"row": 1, "poly": [{"coef": "1", "powers": [0, 0]}]}]}}
    sys = system_from_dict(d)
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(system_to_dict(sys)))
    again = load_system(path)
    x = np.array([[0.1, -0.2], [0.05, 0.3], [0.2, 0.1]])
    t = np.array([0.3, 1.7])
    np.testing.assert_allclose(again.rhs(t, x), sys.rhs(t, x), rtol=1e-14)
    # coupling adds b x_3^2 to row 1
    exp1 = -0.2 * x[0] + x[2] ** 2
    np.testing.assert_allclose(sys.rhs(t, x)[0], exp1, rtol=1e-14)


@pytest.mark.parametrize("bad", [
    {"diag": ["-1", "-2"]},
    {"n": 2, "diag": ["-1"]},
    {"n": 2, "diag": ["-1", "-2"], "p": [{"row": 5, "poly": []}]},
    {"n": 2, "diag": ["-1", "sin("]},
    {"n": 2, "diag": ["-1", "-2"], "p": [{"row": 1, "poly": [{"powers": [1]}]}]},
])
def test_json_errors(bad):
    with pytest.raises(ParseError):
        system_from_dict(bad)
