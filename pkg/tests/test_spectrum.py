import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import expm

from partlin.errors import HorizonTooShort
from partlin.spectrum import (LinearSystem, admits_ED, bohl_interval, dichotomy_spectrum,
                              estimate_K_eps, spectrum_from_dict, transition_matrix)


def test_transition_constant_diagonal():
    A = LinearSystem.diagonal(["-1", "2"])
    np.testing.assert_allclose(transition_matrix(A, 1.0, 0.0), np.diag([np.exp(-1), np.exp(2)]), rtol=1e-8)


def test_transition_identity_at_equal_times():
    A = LinearSystem([["sin(t)", "1"], ["0", "-1"]])
    assert np.array_equal(transition_matrix(A, 3.0, 3.0), np.eye(2))


def test_transition_scalar_closed_form():
    A = LinearSystem([["-2+sin(t)"]])
    phi = transition_matrix(A, np.pi, 0.0)
    assert phi[0, 0] == pytest.approx(np.exp(-2 * np.pi + 2), rel=1e-8)


def test_transition_backward_inverts_forward():
    A = LinearSystem([["-1", "cos(t)"], ["0.5", "sin(t)"]])
    fwd = transition_matrix(A, 2.0, 0.5)
    bwd = transition_matrix(A, 0.5, 2.0)
    np.testing.assert_allclose(fwd @ bwd, np.eye(2), atol=1e-8)


def test_transition_matches_expm_for_constant():
    M = np.array([[0.3, -1.2], [0.7, -0.4]])
    A = LinearSystem([[repr(float(v)) for v in row] for row in M])
    np.testing.assert_allclose(transition_matrix(A, 1.5, 0.0), expm(1.5 * M), rtol=1e-8, atol=1e-10)


def test_bohl_constant():
    iv = bohl_interval("0.75", 100.0, 10.0)
    assert (iv.lo, iv.hi) == (0.75, 0.75)


def test_bohl_sine_perturbation():
    iv = bohl_interval("-2+sin(t)", 200.0, 20.0)
    assert -2 - 2 / 20 <= iv.lo <= iv.hi <= -2 + 2 / 20


def test_bohl_slowly_oscillating_matches_brute_force():
    f = lambda t: np.sin(np.log1p(t)) + np.cos(np.log1p(t))
    iv = bohl_interval("sin(log(1+t))+cos(log(1+t))", 1e4, 50.0)
    t = np.linspace(0.0, 1e4, 200001)
    cum = cumulative_trapezoid(f(t), t, initial=0.0)
    dt = t[1] - t[0]
    lo, hi = np.inf, -np.inf
    for k in range(1000, 20000, 500):  # window lengths 50 .. 1000
        m = (cum[k:] - cum[:-k]) / (k * dt)
        lo, hi = min(lo, m.min()), max(hi, m.max())
    assert iv.hi - iv.lo > 0.5
    assert iv.lo == pytest.approx(lo, abs=2e-3)
    assert iv.hi == pytest.approx(hi, abs=2e-3)


def test_bohl_horizon_too_short():
    with pytest.raises(HorizonTooShort):
        bohl_interval("sin(t)", 30.0, 20.0)


@settings(max_examples=15, deadline=None)
@given(c=st.floats(-3, 3), amp=st.floats(0, 1), w=st.floats(10, 40))
def test_bohl_interval_contains_mean_and_shrinks_with_window(c, amp, w):
    expr = f"({c!r}) + ({amp!r})*sin(t)"
    short = bohl_interval(expr, 8 * w, w)
    long_ = bohl_interval(expr, 8 * w, 2 * w)
    assert short.lo - 1e-9 <= c <= short.hi + 1e-9
    assert short.lo - 1e-9 <= long_.lo and long_.hi <= short.hi + 1e-9
    assert short.hi - short.lo <= 4 * amp / w + 1e-9


def test_admits_ed_scalar_stable():
    r = admits_ED(LinearSystem([["-1"]]), 0.0)
    assert r.admits and r.projector_rank == 1
    # e^{-40} sits below abs_tol, which costs a few 1e-5 in the rate
    assert r.alpha_est == pytest.approx(1.0, abs=1e-3)


def test_admits_ed_scalar_at_its_rate():
    assert not admits_ED(LinearSystem([["-1"]]), -1.0).admits


def test_admits_ed_saddle():
    r = admits_ED(LinearSystem.diagonal(["-1", "1"]), 0.0)
    assert r.admits and r.projector_rank == 1


def test_spectrum_diagonal_constant_scan():
    sp = dichotomy_spectrum(LinearSystem([["-1", "0"], ["0", "1"]]), method="scan")
    step = sp.scan_meta["grid_step"]
    (a, b) = sp.endpoints()
    assert a[0] == pytest.approx(1.0, abs=2 * step) and a[1] == pytest.approx(1.0, abs=2 * step)
    assert b[0] == pytest.approx(-1.0, abs=2 * step) and b[1] == pytest.approx(-1.0, abs=2 * step)


def test_spectrum_scalar_bohl():
    sp = dichotomy_spectrum(LinearSystem([["-2+sin(t)"]]), horizon=400.0, min_window=50.0)
    (iv,) = sp.intervals
    assert abs(iv.lo + 2) <= 0.05 and abs(iv.hi + 2) <= 0.05
    assert not sp.approximate


def test_spectrum_upper_triangular_constant():
    sp = dichotomy_spectrum(LinearSystem([["1", "5"], ["0", "-1"]]), method="scan")
    step = sp.scan_meta["grid_step"]
    ends = sp.endpoints()
    assert len(ends) == 2
    for (lo, hi), target in zip(ends, (1.0, -1.0)):
        assert abs(lo - target) <= 2 * step and abs(hi - target) <= 2 * step
    assert sp.intervals[0].projector_rank_below == 1


def test_spectrum_roundtrip_dict():
    sp = dichotomy_spectrum(LinearSystem.diagonal(["-1", "-3"]), horizon=100.0, min_window=10.0)
    back = spectrum_from_dict(sp.to_dict())
    assert back.endpoints() == sp.endpoints()


def test_K_eps_constant_scalar():
    assert estimate_K_eps(LinearSystem([["-1"]]), -1.0, -1.0, 0.1, 20.0) == pytest.approx(1.0)


def test_K_eps_saddle():
    assert estimate_K_eps(LinearSystem.diagonal(["-1", "1"]), 1.0, -1.0, 0.1, 20.0) == pytest.approx(1.0)


def test_K_eps_sine_perturbation():
    K = estimate_K_eps(LinearSystem([["-2+sin(t)"]]), -2.0, -2.0, 0.1, 60.0)
    assert 1.0 <= K <= np.exp(2.0)
