import csv
import json
import math

import numpy as np
import pytest

from conftest import triangular
from partlin.conjugacy import (TruncationPolicy, decay_exponent, h_limit, partial_linearize,
                               remainder_map, remainder_map_direct, stage_kernel, stage_sequence)
from partlin.errors import GapFailure, TailBoundUnavailable
from partlin.fields import Poly, PolyField
from partlin.gaps import GapParams


def test_truncation_horizon_formula():
    p = TruncationPolicy(tail_tol=1e-6)
    assert p.horizon(-0.5) == pytest.approx(math.log(1 / (0.5 * 1e-6)) / 0.5)
    assert p.tail_bound(-0.5, p.horizon(-0.5)) == pytest.approx(1e-6)
    assert TruncationPolicy(T_max_cap=80).horizon(-1e-4) == 80.0
    assert TruncationPolicy(horizon_scale=2.0).horizon(-1.0) == pytest.approx(2 * p.horizon(-1.0))


def test_truncation_needs_decay():
    with pytest.raises(TailBoundUnavailable):
        TruncationPolicy().horizon(0.0)


def test_stage_order():
    assert stage_sequence(2) == [("prop1", 1)]
    assert stage_sequence(4) == [("prop1", 1), ("prop2", 1), ("prop1", 2), ("prop2", 2), ("prop1", 3)]


def test_decay_exponents_by_hand():
    pairs = [(0.1, 0.2), (-1.0, -0.9), (-2.0, -1.8)]
    assert decay_exponent("prop1", 1, pairs, 0.01, 0.0) == pytest.approx(-1.8 + 1.0 + 0.2 + 0.03)
    assert decay_exponent("prop2", 2, pairs, 0.01, 0.0) == pytest.approx(-3.6 + 0.2 + 0.03)
    assert decay_exponent("prop3", 0, pairs, 0.01, 0.0) == pytest.approx(-5.4 + 2.0 + 0.04)


def test_oracle_h_is_decoupling_coefficient(oracle_chain):
    chain, (l1, l2, b) = oracle_chain
    st = chain.stages[0]
    val, bound = h_limit(st.spec, 0.0, np.array([0.05]))
    assert abs(abs(val[0]) - b / (l1 - l2)) <= bound
    t = np.linspace(0, 5, 7)
    xp = np.linspace(-0.1, 0.1, 7)[None]
    np.testing.assert_allclose(np.abs(st.h(t, xp)), b / (l1 - l2), atol=10 * bound)


def test_oracle_target_is_diagonal(oracle_chain):
    chain, (l1, l2, _) = oracle_chain
    x = np.array([[0.04, -0.07], [0.09, 0.03]])
    np.testing.assert_allclose(chain.target.rhs(np.array([0.3, 2.0]), x),
                               np.array([l1 * x[0], l2 * x[1]]), atol=1e-6)


def test_oracle_kernel_is_constant(oracle_chain):
    chain, (_, _, b) = oracle_chain
    spec = chain.stages[0].spec
    xp = np.array([0.03])
    assert stage_kernel(spec, 1.0, 1.0, xp)[0] == pytest.approx(b)
    assert stage_kernel(spec, 4.0, 1.0, xp)[0] == pytest.approx(b, rel=1e-6)


def test_partially_linear_input_gives_empty_chain():
    f = PolyField([Poly([(-0.3, (1, 0)), (-1.0, (3, 0))], 2),
                   Poly([(-2.0, (0, 1)), (1.0, (1, 1))], 2)])
    chain = partial_linearize(f, [(-0.3, -0.3), (-2.0, -2.0)], GapParams(0.01, 0.0, 1, 2, 2, 2))
    assert len(chain) == 0
    x = np.array([0.05, -0.02])
    np.testing.assert_array_equal(chain.forward(0.0, x), x)


def test_gap_failure_names_stage():
    f = triangular(0.5, -0.3, 1.0)
    with pytest.raises(GapFailure) as exc:
        partial_linearize(f, [(0.5, 0.5), (-0.3, -0.3)], GapParams(0.0, 0.0, 1, 2, 6, 2))
    assert exc.value.stage_index == 0
    assert not exc.value.report.overall


A, C = -0.2, -1.5


@pytest.fixture(scope="module")
def remainder_chain():
    # x1' = a x1 + x2^2, x2' = c x2: only the flat remainder is removed, by x1 + x2^2 / (a - 2c)
    f = PolyField([Poly([(A, (1, 0)), (1.0, (0, 2))], 2), Poly([(C, (0, 1))], 2)])
    return partial_linearize(f, [(A, A), (C, C)], GapParams(0.01, 0.0, 1, 2, 2, 2))


def test_remainder_stage_matches_closed_form(remainder_chain):
    (st,) = remainder_chain.stages
    x = np.array([[0.05, -0.03, 0.0], [0.08, 0.1, -0.06]])
    want = np.array([x[0] + x[1] ** 2 / (A - 2 * C), x[1]])
    np.testing.assert_allclose(remainder_chain.forward(0.5, x), want, atol=1e-7)


def test_remainder_map_forms_agree(remainder_chain):
    (st,) = remainder_chain.stages
    x = np.array([[0.05, -0.03], [0.08, 0.1]])
    integral = remainder_map(st.source_field, st.target, 0.5, x, T=st.T)
    direct = remainder_map_direct(st.source_field, st.target, 0.5, x, st.T)
    np.testing.assert_allclose(integral, direct, atol=1e-7)
    np.testing.assert_allclose(st.inverse(0.5, st.forward(0.5, x)), x, atol=1e-10)
    np.testing.assert_allclose(direct, st.inverse(0.5, x), atol=1e-7)


def test_remainder_map_fixes_flat_set(remainder_chain):
    (st,) = remainder_chain.stages
    x = np.array([[0.05, -0.07], [0.0, 0.0]])
    np.testing.assert_allclose(remainder_map(st.source_field, st.target, 0.0, x, T=st.T), x, atol=1e-12)


def test_manifest_and_csv(oracle_chain, tmp_path):
    chain, (l1, l2, b) = oracle_chain
    d = json.loads(chain.to_json())
    assert d["n"] == 2 and d["stages"][0]["kind"] == "prop1"
    path = tmp_path / "h.csv"
    chain.dump_h_csv(path, 0)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["s", "x1", "h1"]
    h = np.array([float(r[-1]) for r in rows[1:]])
    np.testing.assert_allclose(np.abs(h), b / (l1 - l2), atol=1e-5)
