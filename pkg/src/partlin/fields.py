"""Vector fields ``f(t, x)`` with batched evaluation.

Every field here accepts ``x`` of shape ``(n,)`` or ``(n, B)`` and ``t`` as a
float or an array broadcastable against the batch axis, so a batch may carry
a different time per member.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import TimeFunction, as_time_function
from .ode import fd_jacobian


def _coef_value(coef, t):
    if isinstance(coef, float):
        return coef
    return coef(t)


def _normalize_coef(coef):
    tf = as_time_function(coef)
    return float(tf(0.0)) if tf.is_constant else tf


class Poly:
    """Polynomial in ``k`` variables with time-dependent coefficients.

    ``terms`` is a sequence of ``(coef, powers)``; ``coef`` is an expression
    string, a number or a :class:`TimeFunction`.
    """

    def __init__(self, terms, nvars):
        self.nvars = int(nvars)
        merged = []
        for coef, powers in terms:
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.nvars:
                raise ValueError(f"monomial {powers} does not have {self.nvars} exponents")
            if any(p < 0 for p in powers):
                raise ValueError("negative exponents are not polynomial")
            c = _normalize_coef(coef)
            if isinstance(c, float) and c == 0.0:
                continue
            merged.append((c, powers))
        self.terms = merged

    @classmethod
    def zero(cls, nvars):
        return cls([], nvars)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[1:]) if x.ndim > 1 else 0.0
        for coef, powers in self.terms:
            mono = _coef_value(coef, t)
            for j, p in enumerate(powers):
                if p:
                    mono = mono * x[j] ** p
            out = out + mono
        return out

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        for coef, powers in self.terms:
            c = _coef_value(coef, t)
            for j, pj in enumerate(powers):
                if pj == 0:
                    continue
                mono = c * pj
                for i, p in enumerate(powers):
                    e = p - 1 if i == j else p
                    if e:
                        mono = mono * x[i] ** e
                g[j] = g[j] + mono
        return g

    def degree_in(self, var):
        return max((p[var] for _, p in self.terms), default=-1)

    def min_degree_in(self, var):
        return min((p[var] for _, p in self.terms), default=None)

    def to_json(self):
        return [{"coef": _coef_str(c), "powers": list(p)} for c, p in self.terms]


def _coef_str(c):
    return c.expr if isinstance(c, TimeFunction) else repr(float(c))


class FuncTerm:
    """Scalar term given by a Python callable ``func(t, x)``.

    ``grad`` falls back to central differences when not supplied.
    """

    def __init__(self, func, nvars, grad=None):
        self.func = func
        self.nvars = int(nvars)
        self._grad = grad

    is_zero = False

    def __call__(self, t, x):
        return self.func(t, np.asarray(x, dtype=float))

    def grad(self, t, x):
        if self._grad is not None:
            return self._grad(t, np.asarray(x, dtype=float))
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        for j in range(self.nvars):
            h = 1e-6 * np.maximum(1.0, np.abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] = xp[j] + h
            xm[j] = xm[j] - h
            g[j] = (self.func(t, xp) - self.func(t, xm)) / (2 * h)
        return g


def as_term(obj, nvars):
    if obj is None:
        return Poly.zero(nvars)
    if isinstance(obj, (Poly, FuncTerm)):
        if obj.nvars != nvars:
            raise ValueError(f"term has {obj.nvars} variables, expected {nvars}")
        return obj
    if callable(obj):
        return FuncTerm(obj, nvars)
    return Poly(obj, nvars)


class Field:
    """Base class: subclasses implement ``rhs``; ``jacobian`` defaults to differences."""

    n: int

    def rhs(self, t, x):
        raise NotImplementedError

    def __call__(self, t, x):
        return self.rhs(t, x)

    def jacobian(self, t, x):
        return fd_jacobian(self.rhs, t, x)

    def xn_coefficients(self, t, xprime, var, qmax, rows=None):
        """Taylor coefficients in ``x[var]`` at ``x[var] = 0``.

        ``xprime`` holds the leading ``var`` coordinates (shape ``(var, B)``);
        trailing coordinates are set to zero. Returns an array of shape
        ``(len(rows), qmax + 1, B)``.
        """
        return numeric_xn_coefficients(self, t, xprime, var, qmax, rows)


# Chebyshev points of the first kind on [-1, 1]; fits of degree K-1 through K points
_TAYLOR_NODES = 14
_TAYLOR_RADIUS = 0.05


def numeric_xn_coefficients(field_, t, xprime, var, qmax, rows=None, radius=_TAYLOR_RADIUS,
                            nodes=_TAYLOR_NODES):
    xprime = np.atleast_2d(np.asarray(xprime, dtype=float))
    batch = xprime.shape[1]
    n = field_.n
    rows = list(range(n)) if rows is None else list(rows)
    k = np.arange(nodes)
    z = np.cos((2 * k + 1) * np.pi / (2 * nodes))
    # one big batch: members ordered node-major
    x = np.zeros((n, nodes * batch))
    x[:var] = np.tile(xprime, (1, nodes))
    x[var] = np.repeat(z * radius, batch)
    tt = np.tile(np.broadcast_to(np.asarray(t, dtype=float), (batch,)), nodes)
    vals = field_.rhs(tt, x)[rows].reshape(len(rows), nodes, batch)
    vander = np.vander(z, nodes, increasing=True)
    coef = np.linalg.solve(vander, vals.transpose(1, 0, 2).reshape(nodes, -1))
    coef = coef.reshape(nodes, len(rows), batch).transpose(1, 0, 2)
    scale = radius ** -np.arange(nodes)
    return coef[:, : qmax + 1] * scale[None, : qmax + 1, None]


class PolyField(Field):
    """Polynomial vector field: ``rows[i]`` is a :class:`Poly` in ``n`` variables."""

    def __init__(self, rows):
        self.rows = list(rows)
        self.n = len(self.rows)
        if any(r.nvars != self.n for r in self.rows):
            raise ValueError("every row must be a polynomial in n variables")

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(r(t, x), x.shape[1:]) for r in self.rows])

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.stack([r.grad(t, x) for r in self.rows])

    def xn_coefficient_poly(self, row, var, q):
        """Coefficient of ``x[var]**q`` in ``row`` as a polynomial in the leading ``var`` coordinates."""
        terms = []
        for c, p in self.rows[row].terms:
            if p[var] == q:
                if any(p[var + 1:]):
                    raise ValueError(f"row {row} depends on coordinates beyond {var}")
                terms.append((c, p[:var]))
        return Poly(terms, var)

    def xn_coefficients(self, t, xprime, var, qmax, rows=None):
        xprime = np.atleast_2d(np.asarray(xprime, dtype=float))
        rows = list(range(self.n)) if rows is None else list(rows)
        batch = xprime.shape[1]
        out = np.zeros((len(rows), qmax + 1, batch))
        for a, r in enumerate(rows):
            for q in range(qmax + 1):
                poly = self.xn_coefficient_poly(r, var, q)
                if not poly.is_zero:
                    out[a, q] = np.broadcast_to(poly(t, xprime), (batch,))
        return out

    def restrict(self, d):
        """Leading ``d``-dimensional subsystem; rows must not involve later coordinates."""
        rows = []
        for r in self.rows[:d]:
            terms = []
            for c, p in r.terms:
                if any(p[d:]):
                    raise ValueError("subsystem rows depend on trailing coordinates")
                terms.append((c, p[:d]))
            rows.append(Poly(terms, d))
        return PolyField(rows)

    def max_xn_power(self, row, var):
        return self.rows[row].degree_in(var)

    def to_json(self):
        return {"n": self.n, "rows": [r.to_json() for r in self.rows]}


@dataclass
class CallableField(Field):
    """Wrap a plain ``f(t, x)`` callable."""

    func: object
    n: int

    def rhs(self, t, x):
        return self.func(t, x)
