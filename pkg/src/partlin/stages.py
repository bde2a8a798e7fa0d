"""Coordinate changes used by the decoupling chain.

All transforms act on the leading ``d`` coordinates of an ``n``-dimensional
state and leave the rest alone. Index ``v = d - 1`` is the normal coordinate
of the current level; ``x' = x[:v]``.

* :class:`CouplingStage` removes ``x_v**l`` terms from the rows above ``v``:
  ``x' -> x' + h(t, x') x_v**l``.
* :class:`NormalStage` removes the ``x_v**(l+1)`` term of row ``v``:
  ``x_v -> x_v + h(t, x') x_v**(l+1)``.
* :class:`FlowStage` is the flat-remainder map, defined through flows of the
  source and target systems over a truncated horizon.
"""

from __future__ import annotations

import copy

import numpy as np

from .errors import InverseDiverged
from .fields import Field
from .ode import DEFAULT_CONFIG, integrate_ivp


def batch_flow(field_, t0, span, x, cfg=DEFAULT_CONFIG):
    """Flow every member ``x[:, i]`` from ``t0[i]`` to ``t0[i] + span``."""
    x = np.asarray(x, dtype=float)
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), x.shape[1:]) if x.ndim > 1 else float(t0)
    if span == 0:
        return x.copy()
    sign = 1.0 if span > 0 else -1.0

    def f(w, z):
        return sign * field_.rhs(t0 + sign * w, z)

    return integrate_ivp(f, 0.0, abs(span), x, cfg).states[-1]


def _as_batch(t, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[1],)).copy()
    return t, x, single


class Stage:
    kind = "identity"
    l = 0

    def __init__(self, d, n):
        self.d = d
        self.n = n
        self.v = d - 1
        self.inverse_tol = 1e-13
        self.max_iter = 50
        self.meta = {}

    def forward(self, t, x):
        return np.array(x, dtype=float)

    def inverse(self, t, xt):
        return np.array(xt, dtype=float)

    def with_offset(self, offset):
        return self


class _HStage(Stage):
    """Transform built from a cached ``h(s, x')`` interpolant."""

    def __init__(self, d, n, l, htab, autonomous=False):
        super().__init__(d, n)
        self.l = int(l)
        self.htab = htab
        self.dh_ds = htab.derivative(0)
        self.dh_dx = [htab.derivative(1 + j) for j in range(self.v)]
        self.offset = 0.0
        self.autonomous = autonomous

    def _pts(self, t, xp):
        return np.vstack([t[None, :], xp])

    def h(self, t, xp):
        return self.htab(self._pts(t, xp)) + self.offset

    def with_offset(self, offset):
        """Copy with ``h`` shifted by a constant (fault injection)."""
        other = copy.copy(self)
        other.offset = float(offset)
        return other

    def _fixed_point(self, step, x0, what):
        x = x0
        for _ in range(self.max_iter):
            x_new = step(x)
            err = float(np.max(np.abs(x_new - x))) if x.size else 0.0
            x = x_new
            if err <= self.inverse_tol * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0):
                return x
        raise InverseDiverged(f"{what} inverse did not converge in {self.max_iter} iterations "
                              f"(last change {err:.3e})")


class CouplingStage(_HStage):
    kind = "prop1"

    def forward(self, t, x):
        t, x, single = _as_batch(t, x)
        v = self.v
        out = x.copy()
        out[:v] = x[:v] + self.h(t, x[:v]) * x[v] ** self.l
        return out[:, 0] if single else out

    def inverse(self, t, xt):
        t, xt, single = _as_batch(t, xt)
        v = self.v
        xn = xt[v] ** self.l
        target = xt[:v]
        xp = self._fixed_point(lambda y: target - self.h(t, y) * xn, target.copy(), "coupling")
        out = xt.copy()
        out[:v] = xp
        return out[:, 0] if single else out

    def jac_dt(self, t, x):
        """``D_x F`` of shape ``(n, n, B)`` and ``d_t F`` of shape ``(n, B)``."""
        t, x, _ = _as_batch(t, x)
        v, l = self.v, self.l
        batch = x.shape[1]
        n = x.shape[0]
        pts = self._pts(t, x[:v])
        xn = x[v]
        jac = np.zeros((n, n, batch))
        idx = np.arange(n)
        jac[idx, idx] = 1.0
        for j, dtab in enumerate(self.dh_dx):
            jac[:v, j] += dtab(pts) * xn ** l
        jac[:v, v] = l * self.h(t, x[:v]) * xn ** (l - 1)
        dt = np.zeros((n, batch))
        dt[:v] = self.dh_ds(pts) * xn ** l
        return jac, dt


class NormalStage(_HStage):
    kind = "prop2"

    def forward(self, t, x):
        t, x, single = _as_batch(t, x)
        v = self.v
        out = x.copy()
        out[v] = x[v] + self.h(t, x[:v])[0] * x[v] ** (self.l + 1)
        return out[:, 0] if single else out

    def inverse(self, t, xt):
        t, xt, single = _as_batch(t, xt)
        v, l = self.v, self.l
        hv = self.h(t, xt[:v])[0]
        target = xt[v]
        xn = self._fixed_point(lambda y: target - hv * y ** (l + 1), target.copy(), "normal")
        out = xt.copy()
        out[v] = xn
        return out[:, 0] if single else out

    def jac_dt(self, t, x):
        t, x, _ = _as_batch(t, x)
        v, l = self.v, self.l
        batch = x.shape[1]
        n = x.shape[0]
        pts = self._pts(t, x[:v])
        xn = x[v]
        jac = np.zeros((n, n, batch))
        idx = np.arange(n)
        jac[idx, idx] = 1.0
        for j, dtab in enumerate(self.dh_dx):
            jac[v, j] = dtab(pts)[0] * xn ** (l + 1)
        jac[v, v] = 1.0 + (l + 1) * self.h(t, x[:v])[0] * xn ** l
        dt = np.zeros((n, batch))
        dt[v] = self.dh_ds(pts)[0] * xn ** (l + 1)
        return jac, dt


class ConjugatedFlow:
    """Flow of the field reached after ``stages``, computed by conjugating the base flow."""

    def __init__(self, base, stages, cfg=DEFAULT_CONFIG):
        self.base = base
        self.stages = list(stages)
        self.cfg = cfg

    def __call__(self, t0, span, y):
        x = y
        for st in reversed(self.stages):
            x = st.inverse(t0, x)
        x = batch_flow(self.base, t0, span, x, self.cfg)
        t1 = np.asarray(t0) + span
        for st in self.stages:
            x = st.forward(t1, x)
        return x


class FlowStage(Stage):
    """Flat-remainder map between a source and an explicit target over horizon ``T``.

    ``forward(t, y) = phi_tgt(t, t+T, phi_src(t+T, t, y))`` sends source
    coordinates to target coordinates; the inverse starts from the mirrored
    composition and is polished by a fixed point on ``forward``.
    """

    kind = "prop3"

    def __init__(self, d, n, source_flow, target, T, cfg=DEFAULT_CONFIG):
        super().__init__(d, n)
        self.source_flow = source_flow
        self.target = target
        self.T = float(T)
        self.cfg = cfg
        self.inverse_tol = 1e-12

    def _lead(self, t, x):
        t, x, single = _as_batch(t, x)
        return t, x, single

    def forward(self, t, x):
        t, x, single = self._lead(t, x)
        d = self.d
        y = self.source_flow(t, self.T, x[:d])
        z = batch_flow(self.target, t + self.T, -self.T, y, self.cfg)
        out = x.copy()
        out[:d] = z
        return out[:, 0] if single else out

    def explicit_inverse(self, t, xt):
        t, xt, single = self._lead(t, xt)
        d = self.d
        z = batch_flow(self.target, t, self.T, xt[:d], self.cfg)
        y = self.source_flow(t + self.T, -self.T, z)
        out = xt.copy()
        out[:d] = y
        return out[:, 0] if single else out

    def inverse(self, t, xt):
        t, xt, single = self._lead(t, xt)
        x = self.explicit_inverse(t, xt)
        scale = max(1.0, float(np.max(np.abs(xt))))
        for _ in range(self.max_iter):
            res = self.forward(t, x) - xt
            err = float(np.max(np.abs(res)))
            if err <= self.inverse_tol * scale:
                break
            x = x - res
        else:
            raise InverseDiverged(f"flat-remainder inverse stalled at {err:.3e}")
        return x[:, 0] if single else x


class PushforwardField(Field):
    """``F_* f``: the field whose flow is ``F`` applied to the flow of ``f``."""

    def __init__(self, source, stage):
        self.source = source
        self.stage = stage
        self.n = source.n
        self.autonomous = getattr(source, "autonomous", False) and getattr(stage, "autonomous", False)

    def rhs(self, t, xt):
        t, xt, single = _as_batch(t, xt)
        x = self.stage.inverse(t, xt)
        f = self.source.rhs(t, x)
        jac, dt = self.stage.jac_dt(t, x)
        out = np.einsum("ijb,jb->ib", jac, f) + dt
        return out[:, 0] if single else out


class InverseMappedField(Field):
    """``f(t, F^{-1}(t, x))`` for rows that a transform does not touch."""

    def __init__(self, source, stages):
        self.source = source
        self.stages = list(stages)
        self.n = source.n

    def rhs(self, t, xt):
        t, xt, single = _as_batch(t, xt)
        x = xt
        for st in reversed(self.stages):
            x = st.inverse(t, x)
        out = self.source.rhs(t, x)
        return out[:, 0] if single else out


class LevelTarget(Field):
    """Leading ``d`` rows from an explicit level target, trailing rows mapped through the level inverse."""

    def __init__(self, lead, trailing, d):
        self.lead = lead
        self.trailing = trailing
        self.d = d
        self.n = trailing.n if trailing is not None else lead.n

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        head = self.lead.rhs(t, x[: self.d])
        if self.trailing is None or self.d == self.n:
            return head
        tail = self.trailing.rhs(t, x)[self.d:]
        return np.concatenate([head, tail])
