"""Spectral gap conditions for the staged decoupling transforms.

Spectra are lists of intervals ``[lo_i, hi_i]`` in descending order, so index
0 is the top interval and index ``n-1`` the bottom one. Where a condition
names an interval without saying which endpoint, the checker substitutes the
upper endpoint under a positive coefficient and the lower endpoint under a
negative one (the strictest reading); the opposite substitution is reported
as the lenient value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import OrderingError, ParamError
from .expr import as_time_function
from .ode import cumulative_integral


@dataclass(frozen=True)
class GapParams:
    eps: float
    delta: float
    l: int = 1
    m: int = 0
    k: int = 1
    n: int = 2

    def __post_init__(self):
        if self.eps < 0 or self.delta < 0:
            raise ParamError("eps and delta must be nonnegative")
        if self.n < 2:
            raise ParamError("dimension must be at least 2")

    def with_l(self, l):
        return GapParams(self.eps, self.delta, l, self.m, self.k, self.n)


@dataclass
class Clause:
    name: str
    lhs: float
    relation: str
    satisfied: bool
    lenient_lhs: float | None = None
    gating: bool = True

    def to_dict(self):
        d = {"name": self.name, "lhs": self.lhs, "relation": self.relation,
             "satisfied": self.satisfied}
        if self.lenient_lhs is not None:
            d["lenient_lhs"] = self.lenient_lhs
        if not self.gating:
            d["gating"] = False
        return d


@dataclass
class GapReport:
    condition_id: int
    clauses: list = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(c.satisfied for c in self.clauses if c.gating)

    def failed(self):
        return [c.name for c in self.clauses if c.gating and not c.satisfied]

    def clause(self, name):
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"condition": self.condition_id, "overall": self.overall,
                "clauses": [c.to_dict() for c in self.clauses]}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _endpoints(spectrum):
    if hasattr(spectrum, "intervals"):
        pairs = [(iv.lo, iv.hi) for iv in spectrum.intervals]
    else:
        pairs = [(float(a), float(b)) for a, b in spectrum]
    for lo, hi in pairs:
        if lo > hi:
            raise OrderingError(f"interval [{lo}, {hi}] has lo > hi")
    for (lo1, _), (_, hi2) in zip(pairs, pairs[1:]):
        if not lo1 > hi2:
            raise OrderingError("spectral intervals must be disjoint and in descending order")
    return pairs


def _lt0(name, lhs, lenient=None, gating=True):
    return Clause(name, float(lhs), "< 0", bool(lhs < 0), None if lenient is None else float(lenient),
                  gating)


def check_condition(cid: int, spectrum, params: GapParams) -> GapReport:
    """Evaluate gap condition ``cid`` (1 to 4) on a descending spectrum."""
    pairs = _endpoints(spectrum)
    n = params.n
    if len(pairs) != n:
        raise OrderingError(f"need {n} spectral intervals, got {len(pairs)}")
    if cid not in (1, 2, 3, 4):
        raise ParamError(f"unknown condition {cid}")
    if cid in (1, 2) and not 1 <= params.l <= n - 1:
        raise ParamError(f"l = {params.l} outside 1..{n - 1}")
    if cid in (1, 4) and params.m < n:
        raise ParamError(f"m = {params.m} must be at least n = {n}")

    lo1, hi1 = pairs[0]
    lon, hin = pairs[-1]
    lo_nm1, hi_nm1 = pairs[-2]
    ed = params.eps + params.delta
    l, m, k = params.l, params.m, params.k
    rep = GapReport(cid)
    rep.clauses.append(Clause("a: disjoint descending ordering", 0.0, "holds", True))
    rep.clauses.append(_lt0("a: top of the bottom interval", hin, lon))
    if cid in (1, 2, 3) and hi1 < 0:
        rep.clauses.append(_lt0("rate margin: hi_1 + eps + delta", hi1 + ed, lo1 + ed))

    if cid == 1:
        if hi1 >= 0:
            lhs = l * hin - lo_nm1 + (m + 1 - l) * hi1 + (m + 2 * l) * ed
            len_ = l * lon - hi_nm1 + (m + 1 - l) * hi1 + (m + 2 * l) * ed
            rep.clauses.append(_lt0("b: l*hi_n - lo_{n-1} + (m+1-l)*hi_1 + (m+2l)(eps+delta)", lhs, len_))
        else:
            lhs = l * hin - lo_nm1 + hi1 + (m + 2) * ed
            len_ = l * lon - hi_nm1 + lo1 + (m + 2) * ed
            rep.clauses.append(_lt0("c: l*hi_n - lo_{n-1} + hi_1 + (m+2)(eps+delta)", lhs, len_))
    elif cid == 2:
        if hi1 >= 0:
            for i in range(1, n + 1):
                lhs = hin + i * hi1 + (l + i) * ed
                rep.clauses.append(_lt0(f"b[i={i}]: hi_n + i*hi_1 + (l+i)(eps+delta)", lhs,
                                        lon + i * lo1 + (l + i) * ed))
                alt = l * hin + i * hi1 + (l + i) * ed
                rep.clauses.append(_lt0(f"b'[i={i}]: l*hi_n + i*hi_1 + (l+i)(eps+delta)", alt,
                                        l * lon + i * lo1 + (l + i) * ed))
        else:
            lhs = l * hin + hi1 + (l + 1) * ed
            rep.clauses.append(_lt0("c: l*hi_n + hi_1 + (l+1)(eps+delta)", lhs,
                                    l * lon + lo1 + (l + 1) * ed))
    elif cid == 3:
        lhs = n * hin - lon + (n + 1) * ed
        rep.clauses.append(_lt0("b: n*hi_n - lo_n + (n+1)(eps+delta)", lhs, n * lon - hin + (n + 1) * ed))
    else:
        if hi1 >= 0:
            lhs = k * hin + m * hi1 - m * lon
            rep.clauses.append(_lt0("b: k*hi_n + m*hi_1 - m*lo_n", lhs, k * lon + m * lo1 - m * hin))
        else:
            lhs = k * hin + hi1 - m * lon
            rep.clauses.append(_lt0("c: k*hi_n + hi_1 - m*lo_n", lhs, k * lon + lo1 - m * hin))
            rep.clauses.append(_lt0("c: k*hi_n - lo_n", k * hin - lon, k * lon - hin))
        # informational: do small eps, delta exist for Conditions 1 and 2 at every l?
        zero = GapParams(0.0, 0.0, 1, m, k, n)
        for cond in (1, 2):
            ok = all(check_condition(cond, spectrum, zero.with_l(ll)).overall for ll in range(1, n))
            rep.clauses.append(Clause(f"implied: Condition {cond} at eps = delta = 0 for all l",
                                      0.0, "holds", ok, gating=False))
    return rep


@dataclass
class EnvelopeResult:
    ok: bool
    worst_pair: tuple
    worst_ratio: float

    def __bool__(self):
        return self.ok


def scalar_envelope_check(a, interval, eps: float, K: float, horizon: float,
                          samples: int = 801) -> EnvelopeResult:
    """Two-sided bound ``e^{(lo-eps)(t-s)}/K <= Lambda(t,s) <= K e^{(hi+eps)(t-s)}`` on sampled ``t >= s``."""
    if K < 1 or eps <= 0:
        raise ValueError("need K >= 1 and eps > 0")
    a = as_time_function(a)
    lo, hi = (interval.lo, interval.hi) if hasattr(interval, "lo") else interval
    fine = np.linspace(0.0, horizon, 8 * (samples - 1) + 1)
    if a.is_constant:
        L = float(a(0.0)) * fine[::8]
    else:
        L = cumulative_integral(a(fine), fine[1] - fine[0])[::8]
    tt = fine[::8]
    dt = tt[:, None] - tt[None, :]
    logl = L[:, None] - L[None, :]
    mask = dt >= 0
    upper = np.where(mask, logl - (hi + eps) * dt, -np.inf)
    lower = np.where(mask, (lo - eps) * dt - logl, -np.inf)
    excess = np.maximum(upper, lower) - np.log(K)
    i, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[i, j])
    return EnvelopeResult(worst <= 1e-12, (float(tt[j]), float(tt[i])), float(np.exp(worst)))
