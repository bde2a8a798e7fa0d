"""Partially linear systems and their structural checks.

A system is ``x' = B(t) x + P(t, x')`` column plus optional coupling ``Q`` and
remainder ``R``. Row ``n`` of the perturbation multiplies ``x_n``::

    x_j' = a_j(t) x_j + p_j(t, x')                 j < n
    x_n' = (a_n(t) + p_n(t, x')) x_n

Rows are indexed from 0 in code and from 1 in JSON files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned, ParseError
from .expr import TimeFunction, as_time_function
from .fields import Field, FuncTerm, Poly, PolyField, as_term
from .ode import (DEFAULT_CONFIG, IntegratorConfig, integrate_ivp, tangent_flow,
                  variational_solution)


@dataclass
class DiagonalSystem:
    diag: list

    def __post_init__(self):
        self.diag = [as_time_function(a) for a in self.diag]
        if not self.diag:
            raise ValueError("diagonal must be nonempty")

    @property
    def n(self):
        return len(self.diag)

    def values(self, t):
        return np.stack([np.broadcast_to(a(t), np.shape(t)) for a in self.diag])

    def matrix(self, t):
        return np.diag([a(float(t)) for a in self.diag])


@dataclass
class PerturbationP:
    """``p_funcs[i]`` are terms in the leading ``n-1`` coordinates."""

    p_funcs: list
    delta_bound: float = float("inf")
    jac_bound: float = float("inf")

    def terms(self, n):
        if len(self.p_funcs) != n:
            raise ValueError(f"need {n} perturbation rows, got {len(self.p_funcs)}")
        return [as_term(p, n - 1) for p in self.p_funcs]


@dataclass
class CouplingQ:
    """``b_j(t, x') x_n**l`` in rows ``j < n``; an entry for row n carries ``x_n**(l+1)``."""

    b_funcs: list
    order_l: int

    def __post_init__(self):
        if self.order_l < 1:
            raise ValueError("coupling order must be at least 1")


@dataclass
class RemainderTerm:
    """Remainder given per row as a polynomial in all ``n`` coordinates or as one callable."""

    r_func: object
    class_m: int = 0
    class_n: int = 0
    vanish_order: int = 0


class PartiallyLinearSystem(Field):
    """Assembled field of a diagonal system with perturbation, coupling and remainder.

    ``linear`` optionally replaces the diagonal by a full matrix of time
    functions; the diagonal then records its diagonal entries.
    """

    def __init__(self, diag, P=None, Q=None, R=None, linear=None):
        self.diag = diag if isinstance(diag, DiagonalSystem) else DiagonalSystem(diag)
        self.n = n = self.diag.n
        self.P = P if P is not None else PerturbationP([None] * n)
        self.Q = Q
        self.R = R
        self._p = self.P.terms(n)
        self.linear = None
        if linear is not None:
            self.linear = [[as_time_function(c) for c in row] for row in linear]
            if len(self.linear) != n or any(len(r) != n for r in self.linear):
                raise ValueError("linear part must be n x n")
            if any(not self.linear[n - 1][j].is_zero for j in range(n - 1)):
                raise ValueError("row n of the linear part must be diagonal")
        self._b = None
        if Q is not None:
            if len(Q.b_funcs) not in (n - 1, n):
                raise ValueError("coupling needs n-1 or n rows")
            self._b = [as_term(b, n - 1) for b in Q.b_funcs]
        self._r = None
        if R is not None:
            if isinstance(R.r_func, (list, tuple)):
                self._r = [as_term(r, n) for r in R.r_func]
            else:
                self._r = R.r_func

    # -- evaluation -------------------------------------------------------
    def _linear_part(self, t, x):
        out = np.zeros_like(x)
        if self.linear is None:
            for i, a in enumerate(self.diag.diag):
                out[i] = a(t) * x[i]
            return out
        for i, row in enumerate(self.linear):
            for j, c in enumerate(row):
                if not c.is_zero:
                    out[i] = out[i] + c(t) * x[j]
        return out

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        n = self.n
        out = np.array(self._linear_part(t, x), dtype=float)
        xp = x[: n - 1]
        xn = x[n - 1]
        for j in range(n - 1):
            if not self._p[j].is_zero:
                out[j] = out[j] + self._p[j](t, xp)
        if not self._p[n - 1].is_zero:
            out[n - 1] = out[n - 1] + self._p[n - 1](t, xp) * xn
        if self._b is not None:
            l = self.Q.order_l
            for j, b in enumerate(self._b):
                if not b.is_zero:
                    power = l if j < n - 1 else l + 1
                    out[j] = out[j] + b(t, xp) * xn ** power
        if self._r is not None:
            if callable(self._r) and not isinstance(self._r, list):
                out = out + np.asarray(self._r(t, x), dtype=float)
            else:
                for j, r in enumerate(self._r):
                    if not r.is_zero:
                        out[j] = out[j] + r(t, x)
        return out

    @property
    def is_form9(self):
        return self.Q is None and self.R is None

    @property
    def is_polynomial(self):
        terms = list(self._p) + list(self._b or [])
        if self._r is not None:
            if not isinstance(self._r, list):
                return False
            terms += self._r
        return all(isinstance(tm, Poly) for tm in terms)

    def to_poly_field(self) -> PolyField:
        """Exact polynomial representation in all ``n`` coordinates."""
        if not self.is_polynomial:
            raise TypeError("system has non-polynomial terms")
        n = self.n
        rows = [[] for _ in range(n)]
        e = np.eye(n, dtype=int)
        if self.linear is None:
            for i, a in enumerate(self.diag.diag):
                rows[i].append((a, e[i]))
        else:
            for i, row in enumerate(self.linear):
                for j, c in enumerate(row):
                    if not c.is_zero:
                        rows[i].append((c, e[j]))
        for j, p in enumerate(self._p):
            for c, pw in p.terms:
                rows[j].append((c, tuple(pw) + ((1,) if j == n - 1 else (0,))))
        if self._b is not None:
            l = self.Q.order_l
            for j, b in enumerate(self._b):
                for c, pw in b.terms:
                    rows[j].append((c, tuple(pw) + ((l if j < n - 1 else l + 1),)))
        if self._r is not None:
            for j, r in enumerate(self._r):
                rows[j].extend(r.terms)
        return PolyField([Poly(r, n) for r in rows])

    def jacobian(self, t, x):
        if self.is_polynomial:
            if not hasattr(self, "_poly"):
                self._poly = self.to_poly_field()
            return self._poly.jacobian(t, x)
        return super().jacobian(t, x)

    def xn_coefficients(self, t, xprime, var, qmax, rows=None):
        if self.is_polynomial:
            if not hasattr(self, "_poly"):
                self._poly = self.to_poly_field()
            return self._poly.xn_coefficients(t, xprime, var, qmax, rows)
        return super().xn_coefficients(t, xprime, var, qmax, rows)

    def reduced_field(self) -> Field:
        """Rows ``1..n-1`` at ``x_n = 0`` as an ``(n-1)``-dimensional field."""
        return _Reduced(self)

    def exponent_rate(self, t, xprime):
        """``a_n(t) + p_n(t, x')``."""
        return self.diag.diag[-1](t) + self._p[-1](t, xprime)


class _Reduced(Field):
    def __init__(self, full):
        self.full = full
        self.n = full.n - 1

    def rhs(self, t, y):
        y = np.asarray(y, dtype=float)
        x = np.concatenate([y, np.zeros((1,) + y.shape[1:])])
        return self.full.rhs(t, x)[: self.n]


# -- JSON ------------------------------------------------------------------

def _poly_from_json(items, nvars, what):
    terms = []
    for it in items:
        try:
            terms.append((as_time_function(it["coef"]), it["powers"]))
        except KeyError as exc:
            raise ParseError(f"{what}: monomial missing {exc}") from None
    try:
        return Poly(terms, nvars)
    except ValueError as exc:
        raise ParseError(f"{what}: {exc}") from None


def _rows_from_json(items, n, nvars, what):
    rows = [None] * n
    for it in items:
        i = int(it["row"]) - 1
        if not 0 <= i < n:
            raise ParseError(f"{what}: row {i + 1} out of range 1..{n}")
        poly = _poly_from_json(it.get("poly", []), nvars, f"{what} row {i + 1}")
        rows[i] = poly if rows[i] is None else Poly(rows[i].terms + poly.terms, nvars)
    return rows


def system_from_dict(d) -> PartiallyLinearSystem:
    try:
        n = int(d["n"])
        diag = [as_time_function(a) for a in d["diag"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"system spec: {exc}") from None
    if len(diag) != n or n < 2:
        raise ParseError("system spec: diag must list n >= 2 expressions")
    P = PerturbationP(_rows_from_json(d.get("p", []), n, n - 1, "p"))
    Q = None
    if d.get("q"):
        q = d["q"]
        b = _rows_from_json(q.get("b", []), n, n - 1, "q")
        Q = CouplingQ(b if b[-1] is not None else b[:-1], int(q["l"]))
    R = None
    if d.get("r"):
        r = d["r"]
        R = RemainderTerm(_rows_from_json(r.get("terms", []), n, n, "r"),
                          int(r.get("class_m", 0)), int(r.get("class_n", 0)),
                          int(r.get("vanish_order", 0)))
    linear = d.get("linear")
    try:
        return PartiallyLinearSystem(diag, P, Q, R, linear=linear)
    except ValueError as exc:
        raise ParseError(f"system spec: {exc}") from None


def load_system(path) -> PartiallyLinearSystem:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
    return system_from_dict(d)


def system_to_dict(sys: PartiallyLinearSystem):
    def rows(terms, skip_zero=True):
        return [{"row": i + 1, "poly": t.to_json()} for i, t in enumerate(terms)
                if isinstance(t, Poly) and not (skip_zero and t.is_zero)]

    out = {"n": sys.n, "diag": [a.expr for a in sys.diag.diag], "p": rows(sys._p)}
    if sys.Q is not None:
        out["q"] = {"l": sys.Q.order_l, "b": rows(sys._b)}
    if sys.R is not None and isinstance(sys._r, list):
        out["r"] = {"terms": rows(sys._r), "class_m": sys.R.class_m,
                    "class_n": sys.R.class_n, "vanish_order": sys.R.vanish_order}
    if sys.linear is not None:
        out["linear"] = [[c.expr for c in row] for row in sys.linear]
    return out


# -- flows -----------------------------------------------------------------

class _Augmented(Field):
    """Reduced system with the exponent ``E' = a_n + p_n`` appended."""

    def __init__(self, sys):
        self.sys = sys
        self.red = sys.reduced_field()
        self.n = sys.n

    def rhs(self, t, z):
        y = z[:-1]
        rate = np.broadcast_to(self.sys.exponent_rate(t, y), z.shape[1:])
        return np.concatenate([self.red.rhs(t, y), rate[None]])


def flow_partial(sys: PartiallyLinearSystem, t: float, s: float, x,
                 cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Flow of a form-(diagonal + P) system via the closed form of the last component.

    The reduced system is integrated together with ``E = ∫_s^t (a_n + p_n)``,
    and ``phi_n = x_n exp(E)``.
    """
    if not sys.is_form9:
        raise ValueError("flow_partial needs a system without coupling or remainder")
    x = np.asarray(x, dtype=float)
    z0 = np.concatenate([x[:-1], np.zeros((1,) + x.shape[1:])])
    traj = integrate_ivp(_Augmented(sys), s, t, z0, cfg)
    z = traj.states[-1] if t >= s else traj.states[0]
    return np.concatenate([z[:-1], (x[-1] * np.exp(z[-1]))[None]])


@dataclass
class FlatInvarianceReport:
    depths: list
    max_deviation: list
    tol: float
    passed: bool

    def to_dict(self):
        return {"depths": self.depths, "max_deviation": self.max_deviation,
                "tol": self.tol, "passed": self.passed}


def check_flat_invariance(sys: Field, depth: int, samples: int = 16, horizon: float = 5.0,
                          radius: float = 0.1, seed: int = 0, s: float = 0.0,
                          cfg: IntegratorConfig = DEFAULT_CONFIG) -> FlatInvarianceReport:
    """Integrate from states whose last ``d`` coordinates vanish and watch them stay zero."""
    n = sys.n
    if not 1 <= depth <= n - 1:
        raise ValueError("depth must lie in 1..n-1")
    rng = np.random.default_rng(seed)
    tol = 10 * max(cfg.abs_tol, cfg.rel_tol * radius)
    devs = []
    for d in range(1, depth + 1):
        x0 = rng.uniform(-radius, radius, (n, samples))
        x0[n - d:] = 0.0
        t_eval = np.linspace(s, s + horizon, 41)
        traj = integrate_ivp(sys, s, s + horizon, x0, cfg, t_eval=t_eval)
        devs.append(float(np.max(np.abs(traj.states[:, n - d:]))))
    return FlatInvarianceReport(list(range(1, depth + 1)), devs, tol,
                                all(v <= tol for v in devs))


@dataclass
class PerturbationBoundReport:
    max_abs: float
    max_jac_norm: float
    delta: float
    jac_bound: float
    passed: bool
    failed_clauses: list = field(default_factory=list)

    def to_dict(self):
        return {"max_abs": self.max_abs, "max_jac_norm": self.max_jac_norm,
                "delta": self.delta, "jac_bound": self.jac_bound, "passed": self.passed,
                "failed_clauses": self.failed_clauses}


def check_perturbation_bounds(P: PerturbationP, K_eps: float, delta: float | None = None,
                              radius: float = 1.0, samples: int = 2000, seed: int = 0,
                              t_range=(0.0, 10.0)) -> PerturbationBoundReport:
    """Sample ``|p_i|`` and the Jacobian of ``(p_1..p_{n-1})`` over a box ``|x'|_inf <= radius``."""
    if samples < 1:
        raise ValueError("samples must be positive")
    n = len(P.p_funcs)
    terms = P.terms(n)
    delta = P.delta_bound if delta is None else delta
    jac_bound = delta / (2.0 * K_eps)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-radius, radius, (n - 1, samples))
    ts = rng.uniform(t_range[0], t_range[1], samples)
    vals = np.stack([np.broadcast_to(tm(ts, xs), (samples,)) for tm in terms])
    max_abs = float(np.max(np.abs(vals)))
    grads = np.stack([tm.grad(ts, xs) for tm in terms[: n - 1]])  # (n-1, n-1, B)
    norms = np.linalg.norm(np.moveaxis(grads, -1, 0), ord=2, axis=(1, 2))
    max_jac = float(np.max(norms))
    failed = []
    if max_abs > delta:
        failed.append("value bound |p_i| <= delta")
    if max_jac > jac_bound:
        failed.append("Jacobian bound <= delta/(2K)")
    return PerturbationBoundReport(max_abs, max_jac, float(delta), float(jac_bound),
                                   not failed, failed)


# -- derivative growth -----------------------------------------------------

@dataclass
class GrowthSlope:
    component: str
    order: int
    slope: float | None
    ceiling: float
    identically_zero: bool
    within: bool

    def to_dict(self):
        return dict(self.__dict__)


def _fit_slope(times, norms):
    k0 = int(0.2 * len(times))
    tt, nn = times[k0:], norms[k0:]
    return float(np.polyfit(tt, np.log(nn), 1)[0])


def derivative_growth_report(sys: Field, max_order: int, s: float, horizon: float, x,
                             lam1_upper: float, lamn_upper: float, eps: float = 0.0,
                             delta: float = 0.0, samples: int = 12, slack: float = 0.1,
                             cfg: IntegratorConfig = DEFAULT_CONFIG, fd_step: float = 1e-4):
    """Fit exponential growth rates of flow derivatives against their ceilings.

    Order 1 comes from the variational equation, order 2 from central
    differences of it. Rows are reported for the leading block (``phi'``) and
    the last component (``phi_n``).
    """
    if not 1 <= max_order <= 2:
        raise ValueError("orders 1 and 2 are supported")
    if samples < 8:
        raise ValueError("need at least 8 elapsed-time samples")
    x = np.asarray(x, dtype=float)
    n = sys.n
    times = np.linspace(s + horizon / samples, s + horizon, samples)
    r1 = lam1_upper + eps + delta
    rn = lamn_upper + eps + delta
    out = []
    for order in range(1, max_order + 1):
        lead = np.zeros(samples)
        last = np.zeros(samples)
        floor_lead = np.zeros(samples)
        floor_last = np.zeros(samples)
        for k, t in enumerate(times):
            phi = variational_solution(sys, s, t, x, cfg)
            # difference noise: integrator error on the first derivative over the step
            floor_lead[k] = 10 * (cfg.rel_tol * np.linalg.norm(phi[: n - 1]) + cfg.abs_tol) / fd_step
            floor_last[k] = 10 * (cfg.rel_tol * np.linalg.norm(phi[n - 1]) + cfg.abs_tol) / fd_step
            if order == 1:
                lead[k] = np.linalg.norm(phi[: n - 1], 2)
                last[k] = np.linalg.norm(phi[n - 1])
            else:
                d2 = np.zeros((n, n, n))
                for j in range(n):
                    e = np.zeros(n)
                    e[j] = fd_step
                    d2[:, :, j] = (variational_solution(sys, s, t, x + e, cfg)
                                   - variational_solution(sys, s, t, x - e, cfg)) / (2 * fd_step)
                lead[k] = np.linalg.norm(d2[: n - 1])
                last[k] = np.linalg.norm(d2[n - 1])
        if order == 1:
            floor_lead[:] = 0.0
            floor_last[:] = 0.0
        ceil_lead = (order * r1 if lam1_upper >= 0 else r1)
        # last component: one factor of the normal rate plus the leading-block rate
        ceil_last = rn + (order - 1) * max(r1, 0.0) if lam1_upper >= 0 else rn
        for name, norms, ceil, floor in (("leading", lead, ceil_lead, floor_lead),
                                         ("last", last, ceil_last, floor_last)):
            if np.all(norms <= floor):
                out.append(GrowthSlope(name, order, None, ceil, True, True))
                continue
            keep = norms > floor
            if keep.sum() < 4:
                raise IllConditioned(f"order-{order} derivatives of the {name} block fall "
                                     "below the difference noise floor")
            slope = _fit_slope((times - s)[keep], norms[keep])
            out.append(GrowthSlope(name, order, slope, ceil, False, slope <= ceil + slack))
    return out


def tangent_check(sys, s, t, x, cfg=DEFAULT_CONFIG):
    """Derivative of the leading block with respect to ``x_n`` (zero for systems without coupling)."""
    v = np.zeros_like(np.asarray(x, dtype=float))
    v[-1] = 1.0
    return tangent_flow(sys, s, t, x, v, cfg)[1][:-1]


__all__ = [
    "DiagonalSystem", "PerturbationP", "CouplingQ", "RemainderTerm", "PartiallyLinearSystem",
    "FuncTerm", "TimeFunction", "system_from_dict", "system_to_dict", "load_system",
    "flow_partial", "check_flat_invariance", "check_perturbation_bounds",
    "derivative_growth_report", "tangent_check",
]
