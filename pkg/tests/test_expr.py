import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlin.errors import DomainError, ParseError
from partlin.expr import TimeFunction, _eval, as_time_function, eval_time_function, parse


@pytest.mark.parametrize("expr,t,expected", [
    ("0", 7.3, 0.0),
    ("sin(t)", 0.0, 0.0),
    ("-2 + sin(t)", math.pi / 2, -1.0),
    ("2^3 - t^2", 3.0, -1.0),
    ("exp(log(1+t))", 4.0, 5.0),
    ("-(t - 1)*pi", 2.0, -math.pi),
])
def test_known_values(expr, t, expected):
    assert eval_time_function(TimeFunction(expr), t) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("bad", ["", "sin t", "t^0.5", "foo(t)", "1 +", "(t", "t t"])
def test_parse_errors(bad):
    with pytest.raises(ParseError):
        TimeFunction(bad)


def test_domain_errors():
    with pytest.raises(DomainError):
        TimeFunction("log(t)")(0.0)
    with pytest.raises(DomainError):
        TimeFunction("1/(t-1)")(1.0)
    with pytest.raises(DomainError):
        TimeFunction("t", domain_lo=0.0)(-1.0)


def test_constants_and_arrays():
    f = as_time_function(-1.5)
    assert f.is_constant and not f.is_zero
    assert as_time_function("0").is_zero
    np.testing.assert_array_equal(f(np.zeros(3)), [-1.5] * 3)
    g = TimeFunction("cos(2*t)")
    t = np.linspace(0, 3, 7)
    np.testing.assert_allclose(g(t), np.cos(2 * t), rtol=0, atol=1e-15)


# compiled closures against the tree interpreter
ATOMS = st.sampled_from(["t", "1.5", "2", "pi", "0.25"])


@st.composite
def expressions(draw, depth=3):
    if depth == 0:
        return draw(ATOMS)
    kind = draw(st.sampled_from(["atom", "bin", "call", "pow"]))
    if kind == "atom":
        return draw(ATOMS)
    if kind == "bin":
        op = draw(st.sampled_from(["+", "-", "*"]))
        return f"({draw(expressions(depth - 1))}) {op} ({draw(expressions(depth - 1))})"
    if kind == "call":
        fn = draw(st.sampled_from(["sin", "cos"]))
        return f"{fn}({draw(expressions(depth - 1))})"
    return f"({draw(expressions(depth - 1))})^{draw(st.integers(0, 3))}"


@settings(max_examples=200, deadline=None)
@given(expressions(), st.floats(-3, 3))
def test_compiled_matches_interpreter(text, t):
    f = TimeFunction(text)
    assert f(t) == pytest.approx(_eval(parse(text), t), rel=1e-12, abs=1e-12)
