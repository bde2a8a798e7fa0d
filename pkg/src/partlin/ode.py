"""Adaptive Runge-Kutta integration, variational solutions and quadrature.

The integrator is the Dormand-Prince 5(4) pair with a PI step-size
controller. States may be a vector of shape ``(n,)`` or a batch of shape
``(n, B)``; the error norm is taken over the whole batch so every member
shares one step sequence. Backward integration reverses time in the field,
so both directions run through the same stepping loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, StepFailure

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.5
    method_order: int = 5
    max_steps: int = 200_000
    blowup_cap: float = 1e8

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.max_step > 0):
            raise ValueError("rel_tol, abs_tol and max_step must be positive")
        if self.method_order not in (4, 5):
            raise ValueError("method_order must be 4 or 5")

    def scaled(self, factor: float) -> "IntegratorConfig":
        return IntegratorConfig(self.rel_tol * factor, self.abs_tol * factor, self.max_step,
                                self.method_order, self.max_steps, self.blowup_cap)


DEFAULT_CONFIG = IntegratorConfig()


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times),) + state shape
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _as_field(field_):
    return field_ if callable(field_) else field_.rhs


def integrate_ivp(field_, s: float, t: float, x0, cfg: IntegratorConfig = DEFAULT_CONFIG,
                  t_eval=None) -> Trajectory:
    """Solve ``x' = field(t, x)``, ``x(s) = x0`` up to time ``t``.

    ``t_eval`` lists intermediate output times (between ``s`` and ``t``);
    the integrator lands on each of them exactly. The returned trajectory
    always starts at ``s`` and ends at ``t``, ordered by increasing time.
    """
    f = _as_field(field_)
    y = np.array(x0, dtype=float)
    s = float(s)
    t = float(t)
    direction = 1.0 if t >= s else -1.0
    span = abs(t - s)

    if t_eval is None:
        marks = np.array([span])
    else:
        te = np.asarray(sorted(set(float(v) for v in t_eval)), dtype=float)
        lo, hi = min(s, t), max(s, t)
        if np.any(te < lo - 1e-12) or np.any(te > hi + 1e-12):
            raise ValueError("t_eval outside the integration interval")
        marks = np.unique(np.concatenate([np.abs(te - s), [span]]))
        marks = marks[marks > 0]

    out_w = [0.0]
    out_y = [y.copy()]
    stats = {"steps": 0, "rejected": 0, "max_err": 0.0, "nfev": 0}

    if span == 0.0:
        traj = Trajectory(np.array([s]), np.array([y]), stats)
        return traj

    def g(w, yy):
        stats["nfev"] += 1
        return direction * f(s + direction * w, yy)

    order = cfg.method_order
    expo = 1.0 / 5.0

    w = 0.0
    k1 = g(w, y)
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((k1 / scale) ** 2))
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, cfg.max_step, span)
    err_prev = 1.0
    mark_i = 0

    while mark_i < len(marks):
        target = marks[mark_i]
        if stats["steps"] + stats["rejected"] > cfg.max_steps:
            raise StepFailure(f"exceeded {cfg.max_steps} steps at t={s + direction * w}")
        hit = False
        h_full = h
        if w + h >= target - 1e-14 * max(1.0, target):
            h = target - w
            hit = True
        if h <= 1e-14 * max(1.0, abs(w)):
            if hit:
                w = target
                out_w.append(w)
                out_y.append(y.copy())
                mark_i += 1
                continue
            raise StepFailure(f"step size underflow at t={s + direction * w}")

        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
            ks.append(g(w + _C[i] * h, yi))
        y5 = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        y4 = y + h * sum(b * k for b, k in zip(_B4, ks) if b != 0.0)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y5))
        with np.errstate(over="ignore", invalid="ignore"):
            err = float(np.max(np.abs(y5 - y4) / scale))
        if not np.isfinite(err):
            err = 1e10

        if err <= 1.0:
            y_new = y5 if order == 5 else y4
            w_new = w + h
            stats["steps"] += 1
            stats["max_err"] = max(stats["max_err"], err)
            if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new)) > cfg.blowup_cap:
                raise BlowUp(f"state norm exceeded {cfg.blowup_cap} at t={s + direction * w_new}")
            y = y_new
            w = w_new
            k1 = ks[6] if order == 5 else g(w, y)
            if hit:
                w = target
                out_w.append(w)
                out_y.append(y.copy())
                mark_i += 1
            fac = 0.9 * max(err, 1e-10) ** (-0.7 * expo) * err_prev ** (0.4 * expo)
            fac = min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            h = min(max(h * fac, h_full) if hit else h * fac, cfg.max_step)
        else:
            stats["rejected"] += 1
            fac = max(0.2, 0.9 * err ** (-expo))
            h = h * fac

    ws = np.array(out_w)
    ys = np.array(out_y)
    times = s + direction * ws
    if direction < 0:
        times = times[::-1]
        ys = ys[::-1]
    return Trajectory(times, ys, stats)


def flow(field_, s: float, t: float, x0, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Final state of :func:`integrate_ivp`."""
    traj = integrate_ivp(field_, s, t, x0, cfg)
    return traj.states[-1] if t >= s else traj.states[0]


def fd_jacobian(field_, t, x) -> np.ndarray:
    """Central-difference Jacobian with step ``1e-6 * max(1, |x_j|)``.

    ``x`` has shape ``(n,)`` or ``(n, B)``; the result is ``(n, n)`` or
    ``(n, n, B)``.
    """
    f = _as_field(field_)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    cols = []
    for j in range(n):
        hj = 1e-6 * np.maximum(1.0, np.abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] = xp[j] + hj
        xm[j] = xm[j] - hj
        cols.append((f(t, xp) - f(t, xm)) / (2 * hj))
    return np.stack(cols, axis=1)


def jacobian_of(field_, t, x) -> np.ndarray:
    jac = getattr(field_, "jacobian", None)
    if jac is not None:
        return jac(t, x)
    return fd_jacobian(field_, t, x)


def variational_solution(field_, s: float, t: float, x0,
                         cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Derivative ``D_x phi(t, s, x0)`` of the flow with respect to the initial state.

    Solves the variational equation ``Y' = D_x f(t, phi) Y`` alongside the
    trajectory. Uses the field's ``jacobian`` method when it has one and
    central differences otherwise.
    """
    f = _as_field(field_)
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    if s == t:
        return np.eye(n)

    def rhs(tt, z):
        x = z[:n]
        y = z[n:].reshape(n, n)
        jac = jacobian_of(field_, tt, x)
        return np.concatenate([f(tt, x), (jac @ y).ravel()])

    z0 = np.concatenate([x0, np.eye(n).ravel()])
    zt = flow(rhs, s, t, z0, cfg)
    return zt[n:].reshape(n, n)


def tangent_flow(field_, s: float, t: float, x0, v0, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Batched flow plus one tangent vector per member: ``(phi, D_x phi . v0)``.

    ``x0`` and ``v0`` have shape ``(n, B)``. The tangent is propagated with a
    central difference of the field along the tangent direction.
    """
    f = _as_field(field_)
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]

    def rhs(tt, z):
        x = z[:n]
        v = z[n:]
        vn = np.sqrt(np.sum(v * v, axis=0))
        xn = np.sqrt(np.sum(x * x, axis=0))
        eps = 1e-6 * np.maximum(1.0, xn) / np.where(vn > 0, vn, 1.0)
        dv = (f(tt, x + eps * v) - f(tt, x - eps * v)) / (2 * eps)
        dv = np.where(vn > 0, dv, 0.0)
        return np.concatenate([f(tt, x), dv])

    z = flow(rhs, s, t, np.concatenate([x0, np.asarray(v0, dtype=float)]), cfg)
    return z[:n], z[n:]


def cumulative_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative integral of uniformly sampled values (composite Simpson).

    Odd-indexed entries use Simpson on the preceding even panel plus a
    quadratic correction, so the table is fourth-order accurate everywhere.
    """
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(v)
    if len(v) < 3:
        out[1:] = np.cumsum(0.5 * dt * (v[1:] + v[:-1]))
        return out
    # even nodes: composite Simpson
    panels = dt / 3.0 * (v[0:-2:2] + 4 * v[1:-1:2] + v[2::2])
    out[2::2] = np.cumsum(panels)
    # odd nodes: integral over [x_{2k}, x_{2k+1}] from the quadratic through three points
    k = np.arange(1, len(v), 2)
    left = v[k - 1]
    mid = v[k]
    right = v[np.minimum(k + 1, len(v) - 1)]
    # for the last odd node without a right neighbour, use the left-shifted quadratic
    last = k + 1 >= len(v)
    part = dt / 12.0 * (5 * left + 8 * mid - right)
    if np.any(last):
        kk = k[last]
        part[last] = dt / 12.0 * (-v[kk - 2] + 8 * v[kk - 1] + 5 * v[kk])
    out[k] = out[k - 1] + part
    return out


def gauss_legendre_panels(a: float, b: float, panels: int, order: int = 8):
    """Nodes and weights of composite Gauss-Legendre quadrature on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights

