"""Construction of the decoupling chain.

At a level of dimension ``d`` the normal coordinate is ``x_v`` with
``v = d - 1``. Stages run in the order coupling(1), normal(1), coupling(2),
..., coupling(d-1); each removes the lowest remaining power of ``x_v`` from
the rows it targets. A flat-remainder stage then maps the result onto the
explicit system

    x'  = f'(t, x', 0)
    x_v = c(t, x') x_v,         c = d f_v / d x_v at x_v = 0.

The integrals defining ``h`` are solved as one batched ODE over a Chebyshev
grid in ``(s, x')`` and cached as a :class:`ChebTensor`.

Orientation: each forward map sends source coordinates to target
coordinates. For the constant triangular system ``x1' = l1 x1 + b x2``,
``x2' = l2 x2`` this gives ``h = b / (l1 - l2)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chebyshev import ChebTensor
from .errors import BlowUp, GapFailure, PartlinError, StepFailure, TailBoundUnavailable
from .fields import Field, Poly, PolyField, numeric_xn_coefficients
from .gaps import GapParams, check_condition
from .ode import DEFAULT_CONFIG, IntegratorConfig, gauss_legendre_panels, integrate_ivp
from .stages import (ConjugatedFlow, CouplingStage, FlowStage, InverseMappedField, LevelTarget,
                     NormalStage, PushforwardField, batch_flow)
from .systems import PartiallyLinearSystem


@dataclass
class TruncationPolicy:
    """How far improper integrals are followed.

    The horizon solves ``M e^{alpha T} / |alpha| = tail_tol``; ``horizon_scale``
    stretches every horizon (used to test truncation soundness).
    """

    tail_tol: float = 1e-6
    M_bound: float = 1.0
    T_max_cap: float = 80.0
    horizon_scale: float = 1.0
    alpha_bound: float | None = None

    def horizon(self, alpha=None):
        a = self.alpha_bound if alpha is None else alpha
        if a is None or not a < 0:
            raise TailBoundUnavailable(f"decay exponent {a} is not negative")
        T = math.log(max(self.M_bound / (abs(a) * self.tail_tol), 1.0)) / abs(a)
        return min(T, self.T_max_cap) * self.horizon_scale

    def tail_bound(self, alpha, T):
        return self.M_bound * math.exp(alpha * T) / abs(alpha)


@dataclass
class BuildOptions:
    """Numerical settings of the builder (all have working defaults)."""

    radius: float = 0.2
    window: tuple = (0.0, 10.0)
    margin: float = 0.5
    cfg: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(rel_tol=1e-10, abs_tol=1e-13))
    h_cfg: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(rel_tol=1e-10, abs_tol=1e-13))
    x_nodes: int = 8
    zero_tol: float = 1e-11
    validate_points: int = 6
    recurse: bool = True
    seed: int = 0


# -- level decomposition ---------------------------------------------------

def as_poly_field(f):
    if isinstance(f, PolyField):
        return f
    if isinstance(f, PartiallyLinearSystem) and f.is_polynomial:
        return f.to_poly_field()
    return None


def is_autonomous(f):
    if isinstance(f, PolyField):
        return all(isinstance(c, float) for r in f.rows for c, _ in r.terms)
    return bool(getattr(f, "autonomous", False))


class _Restricted(Field):
    """Rows ``0..v-1`` of a field at ``x_v = 0``."""

    def __init__(self, full, v):
        self.full = full
        self.n = v

    def rhs(self, t, y):
        y = np.asarray(y, dtype=float)
        x = np.concatenate([y, np.zeros((self.full.n - self.n,) + y.shape[1:])])
        return self.full.rhs(t, x)[: self.n]


class LevelParts:
    """Reduced field, normal rate and coupling coefficients of a ``d``-dimensional field."""

    def __init__(self, field_, d=None):
        self.field = field_
        self.d = d = field_.n if d is None else d
        self.v = v = d - 1
        self.poly = as_poly_field(field_)
        if self.poly is not None:
            self.reduced = PolyField([self.poly.xn_coefficient_poly(j, v, 0) for j in range(v)])
            self._rate = self.poly.xn_coefficient_poly(v, v, 1)
            self.flat_poly = self.poly.xn_coefficient_poly(v, v, 0)
        else:
            self.reduced = _Restricted(field_, v)
            self._rate = None
            self.flat_poly = None
        self.autonomous = is_autonomous(field_)
        self.reduced.autonomous = self.autonomous

    def rate(self, t, y):
        y = np.atleast_2d(y)
        if self._rate is not None:
            return np.broadcast_to(self._rate(t, y), y.shape[1:])
        return numeric_xn_coefficients(self.field, t, y, self.v, 1, [self.v])[0, 1]

    def linear_rates(self, t):
        """Diagonal entries of the reduced Jacobian at the origin."""
        z = np.zeros((self.v, np.size(t)))
        jac = self.reduced.jacobian(np.broadcast_to(t, (z.shape[1],)), z)
        return np.stack([jac[j, j] for j in range(self.v)])

    def coupling_poly(self, kind, l):
        """Exact coefficient polynomials when the field is polynomial, else ``None``."""
        if self.poly is None:
            return None
        if kind == "prop1":
            return [self.poly.xn_coefficient_poly(j, self.v, l) for j in range(self.v)]
        return [self.poly.xn_coefficient_poly(self.v, self.v, l + 1)]

    def flat_defect(self, samples=64, seed=0, radius=0.2, t_range=(0.0, 10.0)):
        """Largest ``|f_v(t, x', 0)|`` on samples: zero iff ``x_v = 0`` is invariant."""
        if self.flat_poly is not None:
            if self.flat_poly.is_zero:
                return 0.0
        rng = np.random.default_rng(seed)
        y = rng.uniform(-radius, radius, (self.v, samples))
        t = rng.uniform(*t_range, samples)
        x = np.concatenate([y, np.zeros((self.field.n - self.v, samples))])
        return float(np.max(np.abs(self.field.rhs(t, x)[self.v])))


class Explicit36(Field):
    """Target of the flat-remainder stage at one level."""

    def __init__(self, parts):
        self.parts = parts
        self.n = parts.d
        self.autonomous = parts.autonomous

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        v = self.parts.v
        head = self.parts.reduced.rhs(t, x[:v])
        tail = self.parts.rate(t, x[:v]) * x[v]
        return np.concatenate([head, np.asarray(tail)[None]])


# -- stage specification ---------------------------------------------------

@dataclass
class StageSpec:
    kind: str
    l: int
    parts: LevelParts
    source: Field
    truncation: TruncationPolicy
    alpha: float
    gap: object = None
    b_func: object = None
    b_zero: bool = False
    s_range: tuple = (0.0, 1.0)
    box: np.ndarray | None = None

    @property
    def T(self):
        return self.truncation.horizon(self.alpha)


def _b_from_polys(polys):
    def b(t, y):
        return np.stack([np.broadcast_to(p(t, y), y.shape[1:]) for p in polys])
    return b


def _b_table(spec_kind, l, source, v, lo, hi, degrees):
    rows = list(range(v)) if spec_kind == "prop1" else [v]
    q = l if spec_kind == "prop1" else l + 1

    def func(pts):
        return numeric_xn_coefficients(source, pts[0], pts[1:], v, q, rows)[:, q]

    return ChebTensor.fit(func, lo, hi, degrees)


def _h_rhs(spec, s, b_func):
    parts = spec.parts
    v = parts.v
    l = spec.l
    red = parts.reduced

    if spec.kind == "prop1":
        # w = exp(E) D phi'^{-1} is carried as one matrix; the two factors alone over- and underflow
        def rhs(w, z):
            u = s + w
            y = z[:v]
            psi = z[v: v + v * v].reshape(v, v, -1)
            jac = red.jacobian(u, y)
            dpsi = l * parts.rate(u, y) * psi - np.einsum("ijb,jkb->ikb", psi, jac)
            dacc = np.einsum("ijb,jb->ib", psi, b_func(u, y))
            return np.concatenate([red.rhs(u, y), dpsi.reshape(v * v, -1), dacc])
    else:
        def rhs(w, z):
            u = s + w
            y = z[:v]
            E = z[v]
            dE = l * parts.rate(u, y)
            dacc = np.exp(E) * b_func(u, y)
            return np.concatenate([red.rhs(u, y), dE[None], dacc])
    return rhs


def _h_state0(spec, xp):
    v = spec.parts.v
    batch = xp.shape[1]
    if spec.kind == "prop1":
        psi = np.repeat(np.eye(v).reshape(v * v, 1), batch, axis=1)
        return np.concatenate([xp, psi, np.zeros((v, batch))])
    return np.concatenate([xp, np.zeros((2, batch))])


def solve_h(spec: StageSpec, s, xp, T=None, cfg=DEFAULT_CONFIG):
    """``h_s(x')`` at a batch of points by integrating the augmented system; shape ``(c, B)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    T = spec.T if T is None else T
    z0 = _h_state0(spec, xp)
    c = spec.parts.v if spec.kind == "prop1" else 1
    if T == 0:
        return np.zeros((c, xp.shape[1]))
    zT = integrate_ivp(_h_rhs(spec, s, spec.b_func), 0.0, T, z0, cfg).states[-1]
    return zT[-c:]


def h_limit(spec: StageSpec, s, xprime, cfg=DEFAULT_CONFIG):
    """Truncated improper integral for ``h_s(x')`` and its error bound.

    Returns ``(value, bound)`` where ``bound`` is the tail estimate plus the
    integrator tolerance.
    """
    xprime = np.asarray(xprime, dtype=float)
    single = xprime.ndim == 1
    val = solve_h(spec, s, xprime[:, None] if single else xprime, cfg=cfg)
    bound = spec.truncation.tail_bound(spec.alpha, spec.T) + 10 * cfg.rel_tol
    return (val[:, 0] if single else val), bound


def _trapezoid(y, x):
    return np.sum(0.5 * (y[..., 1:] + y[..., :-1]) * np.diff(x), axis=-1)


def stage_kernel(spec: StageSpec, u, s, xprime, cfg=DEFAULT_CONFIG):
    """Integrand of ``h_s`` at time ``u`` with the scalar linear transitions divided out.

    For the coupling stage this is
    ``Lambda'(u, s) D phi'(u, s, x')^{-1} b(u, phi') exp(l ∫ p_n)``, for the normal
    stage ``b_n(u, phi') exp(l ∫ p_n)``; ``Lambda'`` and ``p_n`` come from the
    diagonal of the linear part.
    """
    if u < s:
        raise ValueError("kernel needs u >= s")
    xp = np.asarray(xprime, dtype=float).reshape(-1, 1)
    parts = spec.parts
    v = parts.v
    z0 = _h_state0(spec, xp)
    s_arr = np.array([float(s)])
    if u > s:
        z = integrate_ivp(_h_rhs(spec, s_arr, spec.b_func), 0.0, u - s, z0, cfg).states[-1]
    else:
        z = z0
    y = z[:v]
    # scalar transitions of the linear diagonal over [s, u]
    ww = np.linspace(s, u, 201) if u > s else np.array([s])
    rates = parts.linear_rates(ww)
    an = parts.rate(ww, np.zeros((v, ww.size)))
    if u > s:
        log_lam = _trapezoid(rates, ww)
        log_an = float(_trapezoid(an, ww))
    else:
        log_lam = np.zeros(v)
        log_an = 0.0
    b = spec.b_func(np.array([float(u)]), y)[:, 0]
    if spec.kind == "prop1":
        psi = z[v: v + v * v].reshape(v, v)
        return np.exp(log_lam - spec.l * log_an) * (psi @ b)
    E = z[v, 0] - spec.l * log_an
    return b * np.exp(E)


# -- building --------------------------------------------------------------

def stage_sequence(d):
    """Kinds and orders of the coupling/normal stages at a level of dimension ``d``."""
    seq = []
    for l in range(1, d):
        seq.append(("prop1", l))
        if l <= d - 2:
            seq.append(("prop2", l))
    return seq


def decay_exponent(kind, l, pairs, eps, delta):
    """Exponent bounding the integrand of a stage from a descending spectrum."""
    ed = eps + delta
    d = len(pairs)
    hi1 = pairs[0][1]
    lon, hin = pairs[-1]
    if kind == "prop1":
        lo_nm1 = pairs[-2][0]
        return l * hin - lo_nm1 + max(hi1, 0.0) + (l + 2) * ed
    if kind == "prop2":
        return l * hin + max(hi1, 0.0) + (l + 1) * ed
    return d * hin - lon + (d + 1) * ed


def _flow_box(parts, box, T, s_vals, cfg, seed):
    """Per-coordinate ``max |y|`` of reduced trajectories started in ``box``."""
    v = parts.v
    rng = np.random.default_rng(seed)
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * v, indexing="ij")).reshape(v, -1)
    pts = np.concatenate([corners, rng.uniform(-1, 1, (v, 24))], axis=1) * box[:, None]
    out = np.array(box, dtype=float)
    if T <= 0:
        return out
    for s0 in s_vals:
        marks = np.linspace(0.0, T, 9)[1:]
        red = parts.reduced
        s_arr = np.full(pts.shape[1], s0)

        def f(w, y):
            return red.rhs(s_arr + w, y)

        try:
            traj = integrate_ivp(f, 0.0, T, pts, cfg, t_eval=marks)
        except (StepFailure, BlowUp) as exc:
            raise BlowUp(f"reduced flow from the box {np.round(box, 4).tolist()} does not stay bounded "
                         f"over {T:.3g} time units ({exc}); reduce the working radius") from None
        out = np.maximum(out, np.max(np.abs(traj.states), axis=(0, 2)))
    return out


def _time_nodes(length, autonomous):
    if autonomous:
        return 2
    return int(min(72, max(8, 0.6 * length + 12)))


@dataclass
class LevelResult:
    d: int
    stages: list
    target: Field
    parts: LevelParts
    manifest: list


def _check_gap(cid, pairs, budget, l, index):
    params = GapParams(budget.eps, budget.delta, l if l else 1, max(budget.m, len(pairs)),
                       budget.k, len(pairs))
    rep = check_condition(cid, pairs, params)
    if not rep.overall:
        raise GapFailure(f"condition {cid} fails at stage {index}: {', '.join(rep.failed())}",
                         report=rep, stage_index=index)
    return rep


def build_level(base, pairs, budget: GapParams, policy: TruncationPolicy, opts: BuildOptions,
                n_total=None, stage_offset=0) -> LevelResult:
    """Decouple the normal coordinate of a ``d``-dimensional field."""
    parts = LevelParts(base)
    d, v = parts.d, parts.v
    n_total = d if n_total is None else n_total
    cfg = opts.cfg
    seq = stage_sequence(d)
    eps, delta = budget.eps, budget.delta
    alphas = [decay_exponent(k, l, pairs, eps, delta) for k, l in seq]
    alpha3 = decay_exponent("prop3", d, pairs, eps, delta)
    # a stage whose exponent is not negative can only be used if it is skipped
    Ts = [policy.horizon(a) if a < 0 else 0.0 for a in alphas]
    T3 = policy.horizon(alpha3)

    # the first stage with a nonzero coefficient is known before any flow is sampled
    for kind, l in seq if parts.poly is not None else []:
        if not all(p.is_zero for p in parts.coupling_poly(kind, l)):
            _check_gap(1 if kind == "prop1" else 2, pairs, budget, l, stage_offset)
            break

    t0, t1 = opts.window
    s_lo = t0 - opts.margin
    # time ranges and boxes, from the last stage backwards
    s_his = [0.0] * len(seq)
    boxes = [None] * len(seq)
    hi = t1 + opts.margin + T3
    box = _flow_box(parts, np.full(v, opts.radius), T3, [s_lo, t1], cfg, opts.seed) * 1.05
    for i in range(len(seq) - 1, -1, -1):
        s_his[i] = hi
        boxes[i] = box
        hi = hi + Ts[i]
        box = np.maximum(box, _flow_box(parts, box, Ts[i], [s_lo, s_his[i]], cfg, opts.seed) * 1.05)

    manifest = []
    stages = []
    source = base
    for i, ((kind, l), alpha, T) in enumerate(zip(seq, alphas, Ts)):
        index = stage_offset + len(stages)
        spec = StageSpec(kind, l, parts, source, policy, alpha, s_range=(s_lo, s_his[i]), box=boxes[i])
        entry = {"kind": kind, "l": l, "level": d, "alpha": alpha, "T": T,
                 "tail_tol": policy.tail_tol, "s_range": [s_lo, s_his[i]],
                 "box": boxes[i].tolist()}
        # coupling coefficients along the reduced flow
        bbox = _flow_box(parts, boxes[i], T, [s_lo, s_his[i]], cfg, opts.seed) * 1.05
        polys = parts.coupling_poly(kind, l) if source is base else None
        if polys is not None:
            spec.b_zero = all(p.is_zero for p in polys)
            spec.b_func = _b_from_polys(polys)
            entry["b"] = "exact"
        else:
            nu = _time_nodes(s_his[i] + T - s_lo, is_autonomous(source))
            lo = np.concatenate([[s_lo], -bbox])
            hi_ = np.concatenate([[s_his[i] + T], bbox])
            table = _b_table(kind, l, source, v, lo, hi_, [nu] + [opts.x_nodes] * v)
            spec.b_zero = float(np.max(np.abs(table.coeffs))) <= opts.zero_tol
            spec.b_func = lambda t, y, tab=table: tab(np.vstack([np.atleast_1d(t)[None, :]
                                                                 * np.ones((1, y.shape[1])), y]))
            entry["b"] = {"table": table.to_dict(), "tail_coef": table.tail_size()}
        if spec.b_zero:
            entry["skipped"] = "coupling coefficient vanishes"
            manifest.append(entry)
            continue
        entry["b_sup"] = _b_sup(spec, bbox, opts.seed)
        entry["b_sup_exceeds_M"] = entry["b_sup"] > policy.M_bound
        cid = 1 if kind == "prop1" else 2
        spec.gap = _check_gap(cid, pairs, budget, l, index)
        if not alpha < 0:
            raise TailBoundUnavailable(f"stage {index}: decay exponent {alpha:.6g} is not negative")
        entry["gap"] = spec.gap.to_dict()
        stage, info = _fit_stage(spec, opts, n_total)
        entry.update(info)
        stage.meta = entry
        stages.append(stage)
        manifest.append(entry)
        source = PushforwardField(source, stage)

    target = Explicit36(parts)
    entry = {"kind": "prop3", "l": d, "level": d, "alpha": alpha3, "T": T3,
             "tail_tol": policy.tail_tol}
    defect = _remainder_size(source, target, v, opts)
    entry["remainder_max"] = defect
    if defect <= opts.zero_tol:
        entry["skipped"] = "remainder vanishes"
        manifest.append(entry)
    else:
        index = stage_offset + len(stages)
        rep = _check_gap(3, pairs, budget, None, index)
        entry["gap"] = rep.to_dict()
        flow = ConjugatedFlow(base, stages, cfg)
        stage = FlowStage(d, n_total, flow, target, T3, cfg)
        stage.meta = entry
        stage.source_field = source
        stages.append(stage)
        manifest.append(entry)
    return LevelResult(d, stages, target, parts, manifest)


def _b_sup(spec, bbox, seed, samples=256):
    rng = np.random.default_rng(seed + 3)
    s_lo, s_hi = spec.s_range
    t = rng.uniform(s_lo, s_hi + spec.T, samples)
    y = rng.uniform(-1, 1, (len(bbox), samples)) * bbox[:, None]
    return float(np.max(np.abs(spec.b_func(t, y))))


def _remainder_size(source, target, v, opts, samples=48):
    rng = np.random.default_rng(opts.seed + 1)
    x = rng.uniform(-opts.radius, opts.radius, (source.n, samples))
    t = rng.uniform(*opts.window, samples)
    return float(np.max(np.abs(source.rhs(t, x) - target.rhs(t, x))))


def _fit_stage(spec, opts, n_total):
    parts = spec.parts
    v = parts.v
    s_lo, s_hi = spec.s_range
    ns = _time_nodes(s_hi - s_lo, parts.autonomous and is_autonomous(spec.source))
    nx = opts.x_nodes
    lo = np.concatenate([[s_lo], -spec.box])
    hi = np.concatenate([[s_hi], spec.box])
    rng = np.random.default_rng(opts.seed + 7)
    probe = np.vstack([rng.uniform(s_lo, s_hi, opts.validate_points),
                       rng.uniform(-1, 1, (v, opts.validate_points)) * spec.box[:, None]])
    direct = solve_h(spec, probe[0], probe[1:], cfg=opts.h_cfg)
    for attempt in range(3):
        table = ChebTensor.fit(lambda p: solve_h(spec, p[0], p[1:], cfg=opts.h_cfg), lo, hi,
                               [ns] + [nx] * v)
        err = float(np.max(np.abs(table(probe) - direct)))
        if err <= 0.1 * spec.truncation.tail_tol:
            break
        ns = int(min(96, 1.5 * ns)) if ns > 2 else ns
        nx += 4
    cls = CouplingStage if spec.kind == "prop1" else NormalStage
    stage = cls(parts.d, n_total, spec.l, table, autonomous=parts.autonomous and is_autonomous(spec.source))
    stage.spec = spec
    info = {"grid": table.to_dict(), "interp_error": err, "h_sup": float(np.max(table.sup_bound())),
            "h_origin": float(np.max(np.abs(table(np.array([[0.5 * (s_lo + s_hi)]] + [[0.0]] * v)))))}
    return stage, info


# -- the chain -------------------------------------------------------------

class ConjugacyChain:
    """Composition of stage transforms from a source system to a target system."""

    def __init__(self, stages, source, target, manifest=None, levels=None):
        self.stages = list(stages)
        self.source = source
        self.target = target
        self.manifest = manifest or []
        self.levels = levels or {}
        self.n = source.n

    def __len__(self):
        return len(self.stages)

    def forward(self, t, x):
        for st in self.stages:
            x = st.forward(t, x)
        return np.asarray(x, dtype=float)

    def inverse(self, t, xt):
        for st in reversed(self.stages):
            xt = st.inverse(t, xt)
        return np.asarray(xt, dtype=float)

    def with_fault(self, index, offset):
        """Copy with a constant added to the ``h`` of stage ``index``."""
        stages = list(self.stages)
        stages[index] = stages[index].with_offset(offset)
        return ConjugacyChain(stages, self.source, self.target, self.manifest, self.levels)

    def manifest_dict(self):
        return {"n": self.n, "stages": self.manifest, "levels": self.levels}

    def to_json(self, **kw):
        return json.dumps(_jsonable(self.manifest_dict()), **kw)

    def dump_h_csv(self, path, index):
        """Write the cached ``h`` of stage ``index`` on its Chebyshev nodes."""
        st = self.stages[index]
        tab = st.htab
        axes = ChebTensor.grid(tab.lo, tab.hi, tab.degrees)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh])
        vals = tab(pts)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"x{j + 1}" for j in range(pts.shape[0] - 1)]
                       + [f"h{j + 1}" for j in range(vals.shape[0])])
            for col in range(pts.shape[1]):
                w.writerow([f"{v:.12g}" for v in pts[:, col]] + [f"{v:.12g}" for v in vals[:, col]])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def partial_linearize(sys, spectrum, budget: GapParams, trunc: TruncationPolicy | None = None,
                      opts: BuildOptions | None = None, check_cond4: bool = True) -> ConjugacyChain:
    """Build the chain from ``sys`` toward a partially linear form, level by level.

    ``spectrum`` lists the ``n`` descending intervals of the linear part; the
    leading ``d`` coordinates are assumed to carry the top ``d`` intervals.
    A level is processed only while the set ``x_v = 0`` is invariant for the
    current leading subsystem; the levels reached are recorded on the chain.
    """
    trunc = trunc or TruncationPolicy()
    opts = opts or BuildOptions()
    base = as_poly_field(sys) or sys
    n = base.n
    pairs = [(iv.lo, iv.hi) for iv in spectrum.intervals] if hasattr(spectrum, "intervals") \
        else [tuple(map(float, p)) for p in spectrum]
    if len(pairs) != n:
        raise GapFailure(f"need {n} spectral intervals, got {len(pairs)}")
    levels = {}
    if check_cond4:
        rep4 = check_condition(4, pairs, GapParams(budget.eps, budget.delta, 1, max(budget.m, n),
                                                   budget.k, n))
        levels["condition4"] = rep4.to_dict()
        if not rep4.overall:
            raise GapFailure("condition 4 fails: " + ", ".join(rep4.failed()), report=rep4)
    stages = []
    manifest = []
    target = base
    sub = base
    done = []
    for d in range(n, 1, -1):
        parts = LevelParts(sub)
        defect = parts.flat_defect(radius=opts.radius, t_range=opts.window, seed=opts.seed)
        if defect > opts.zero_tol:
            levels["stopped_at"] = d
            levels["flat_defect"] = defect
            break
        try:
            res = build_level(sub, pairs[:d], budget, trunc, opts, n_total=n, stage_offset=len(stages))
        except PartlinError as exc:
            if getattr(exc, "stage_index", None) is None and hasattr(exc, "stage_index"):
                exc.stage_index = len(stages)
            raise
        trailing = InverseMappedField(target, res.stages) if d < n else None
        target = LevelTarget(res.target, trailing, d) if d < n else res.target
        stages.extend(res.stages)
        manifest.extend(res.manifest)
        done.append(d)
        if not opts.recurse:
            break
        sub = res.parts.reduced
    levels["flattened"] = done
    return ConjugacyChain(stages, base, target, manifest, levels)


# -- flat-remainder map in integral form -----------------------------------

def remainder_map(source: Field, target: Field, s: float, x, trunc: TruncationPolicy | None = None,
                  alpha: float | None = None, T: float | None = None, panels: int = 6,
                  order: int = 8, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """``x - ∫_s^{s+T} D phi_src(s, u, psi(u)) r(u, psi(u)) du`` with ``psi = phi_tgt(., s, x)``.

    ``r = source - target``. The tangent factor is integrated backward from
    every quadrature node at once, each node on its own rescaled clock.
    """
    if T is None:
        trunc = trunc or TruncationPolicy()
        T = trunc.horizon(alpha)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[:, None] if single else x
    n, B = X.shape
    nodes, weights = gauss_legendre_panels(s, s + T, panels, order)
    K = len(nodes)
    traj = integrate_ivp(target, s, s + T, X, cfg, t_eval=nodes)
    # trajectory times are s, the interior nodes, then s + T
    psi = traj.states[1:1 + K]
    # members ordered node-major: (K * B)
    z0 = np.transpose(psi, (1, 0, 2)).reshape(n, K * B)
    u = np.repeat(nodes, B)
    r = source.rhs(u, z0) - target.rhs(u, z0)
    span = u - s

    def rhs(theta, zz):
        z = zz[:n]
        w = zz[n:]
        tau = u - theta * span
        fz = source.rhs(tau, z)
        wn = np.sqrt(np.sum(w * w, axis=0))
        h = 1e-6 * np.maximum(1.0, np.sqrt(np.sum(z * z, axis=0))) / np.where(wn > 0, wn, 1.0)
        dw = (source.rhs(tau, z + h * w) - source.rhs(tau, z - h * w)) / (2 * h)
        dw = np.where(wn > 0, dw, 0.0)
        return -span * np.concatenate([fz, dw])

    zz = integrate_ivp(rhs, 0.0, 1.0, np.concatenate([z0, r]), cfg).states[-1]
    tang = zz[n:].reshape(n, K, B)
    out = X - np.einsum("k,ikb->ib", weights, tang)
    return out[:, 0] if single else out


def remainder_map_direct(source: Field, target: Field, s: float, x, T: float,
                         cfg: IntegratorConfig = DEFAULT_CONFIG):
    """``phi_src(s, s+T, phi_tgt(s+T, s, x))``: the same map through two flows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[:, None] if single else x
    y = batch_flow(target, s, T, X, cfg)
    out = batch_flow(source, s + T, -T, y, cfg)
    return out[:, 0] if single else out


__all__ = [
    "TruncationPolicy", "BuildOptions", "StageSpec", "LevelParts", "Explicit36", "ConjugacyChain",
    "stage_sequence", "decay_exponent", "solve_h", "h_limit", "stage_kernel", "build_level",
    "partial_linearize", "remainder_map", "remainder_map_direct", "PushforwardField", "Poly",
]
