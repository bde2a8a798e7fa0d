import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from partlin.errors import BlowUp
from partlin.ode import (IntegratorConfig, cumulative_integral, fd_jacobian, flow,
                         gauss_legendre_panels, integrate_ivp, tangent_flow, variational_solution)
from partlin.spectrum import LinearSystem


def decay(t, x):
    return -x


def test_scalar_decay():
    cfg = IntegratorConfig()
    x = flow(decay, 0.0, 1.0, np.array([1.0]), cfg)
    assert x[0] == pytest.approx(math.exp(-1), rel=10 * cfg.rel_tol)


def test_zero_field():
    x0 = np.array([0.3, -2.0])
    np.testing.assert_array_equal(flow(lambda t, x: 0 * x, 1.0, 4.0, x0), x0)


def test_periodic_coefficient():
    x = flow(lambda t, x: (-2 + np.sin(t)) * x, 0.0, 2.0, np.array([1.0]))
    assert x[0] == pytest.approx(math.exp(-4 + 1 - math.cos(2)), rel=1e-9)


def test_variational():
    A = LinearSystem([["-1", "0"], ["0", "1"]])
    np.testing.assert_allclose(variational_solution(A, 0.0, 1.0, np.zeros(2)),
                               np.diag([math.exp(-1), math.e]), rtol=1e-9)
    np.testing.assert_array_equal(variational_solution(A, 2.0, 2.0, np.ones(2)), np.eye(2))


def pendulum(t, x):
    return np.stack([x[1], -np.sin(x[0]) + 0.3 * np.cos(t) * x[1]])


def test_against_scipy():
    x0 = np.array([0.4, -0.2])
    ref = solve_ivp(lambda t, x: pendulum(t, x), (0.0, 8.0), x0, method="DOP853", rtol=1e-12,
                    atol=1e-14).y[:, -1]
    np.testing.assert_allclose(flow(pendulum, 0.0, 8.0, x0), ref, rtol=1e-8, atol=1e-10)


def test_t_eval_and_batch():
    x0 = np.array([[0.4, 0.1, -0.3], [0.0, 0.2, 0.5]])
    traj = integrate_ivp(pendulum, 0.0, 3.0, x0, t_eval=[1.0, 2.0])
    np.testing.assert_allclose(traj.times, [0.0, 1.0, 2.0, 3.0])
    for j in range(3):
        np.testing.assert_allclose(traj.states[-1][:, j], flow(pendulum, 0.0, 3.0, x0[:, j]), rtol=1e-9)


def test_blowup():
    with pytest.raises(BlowUp):
        flow(lambda t, x: x ** 2, 0.0, 2.0, np.array([1.0]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2), st.floats(0.1, 2), st.floats(0.1, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_group_and_backward(s, du, dt, a, b):
    cfg = IntegratorConfig()
    x0 = np.array([a, b])
    u, t = s + du, s + du + dt
    direct = flow(pendulum, s, t, x0, cfg)
    split = flow(pendulum, u, t, flow(pendulum, s, u, x0, cfg), cfg)
    np.testing.assert_allclose(split, direct, atol=1e-8)
    np.testing.assert_allclose(flow(pendulum, t, s, direct, cfg), x0, atol=1e-8)


def test_jacobian_and_tangent():
    x = np.array([0.3, 0.2])
    jac = fd_jacobian(pendulum, 0.5, x)
    np.testing.assert_allclose(jac, [[0, 1], [-math.cos(0.3), 0.3 * math.cos(0.5)]], atol=1e-7)
    phi = variational_solution(pendulum, 0.0, 2.0, x)
    v = np.array([1.0, -0.5])
    _, tang = tangent_flow(pendulum, 0.0, 2.0, x, v)
    np.testing.assert_allclose(tang, phi @ v, rtol=1e-6, atol=1e-9)


def test_quadrature_helpers():
    t = np.linspace(0, 2, 201)
    np.testing.assert_allclose(cumulative_integral(np.cos(t), t[1] - t[0]), np.sin(t), atol=1e-8)
    nodes, weights = gauss_legendre_panels(0.0, 3.0, 4, 6)
    assert np.sum(weights * np.exp(nodes)) == pytest.approx(math.exp(3) - 1, rel=1e-12)
