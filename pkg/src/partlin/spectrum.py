"""Dichotomy spectra of linear systems ``x' = A(t) x``.

Three estimators:

* ``diag``: each diagonal entry contributes its Bohl interval (exact for
  scalar equations, computed from a cumulative quadrature table).
* ``scan``: finite-horizon exponential-dichotomy test on a grid of shift
  rates, from singular values of windowed transition matrices.
* ``qr``: discrete QR triangularization along a long trajectory, then Bohl
  intervals of the diagonal growth rates. Suited to near-touching intervals
  that a shift scan cannot resolve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EnvelopeViolation, GridTooCoarse, HorizonTooShort
from .expr import TimeFunction, as_time_function
from .fields import Field
from .ode import DEFAULT_CONFIG, IntegratorConfig, cumulative_integral, integrate_ivp


class LinearSystem(Field):
    """``A(t)`` as an ``n x n`` grid of time functions."""

    def __init__(self, entries, structure_tag=None):
        rows = [[as_time_function(c) for c in row] for row in entries]
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError("entries must form a square matrix")
        self.entries = rows
        self.n = n
        detected = self._detect()
        if structure_tag is None:
            structure_tag = detected
        order = ["diagonal", "triangular", "full"]
        if structure_tag not in order:
            raise ValueError(f"unknown structure tag {structure_tag!r}")
        if order.index(structure_tag) < order.index(detected):
            raise ValueError(f"entries are {detected}, not {structure_tag}")
        self.structure_tag = structure_tag
        self._const_part = np.array([[c(0.0) if c.is_constant else 0.0 for c in row] for row in rows])
        self._varying = [(i, j, c) for i, row in enumerate(rows) for j, c in enumerate(row)
                         if not c.is_constant]

    @classmethod
    def diagonal(cls, diag):
        n = len(diag)
        return cls([[diag[i] if i == j else 0.0 for j in range(n)] for i in range(n)])

    def _detect(self):
        n = self.n
        off = [(i, j) for i in range(n) for j in range(n) if i != j and not self.entries[i][j].is_zero]
        if not off:
            return "diagonal"
        if all(i < j for i, j in off):
            return "triangular"
        return "full"

    @property
    def diag(self):
        return [self.entries[i][i] for i in range(self.n)]

    def matrix(self, t):
        t = float(t)
        m = self._const_part.copy()
        for i, j, c in self._varying:
            m[i, j] = c(t)
        return m

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        if np.ndim(t) == 0:
            return self.matrix(t) @ x
        out = np.zeros_like(x)
        for i, row in enumerate(self.entries):
            for j, c in enumerate(row):
                if not c.is_zero:
                    out[i] = out[i] + c(t) * x[j]
        return out

    def jacobian(self, t, x):
        m = self.matrix(t)
        x = np.asarray(x)
        return m if x.ndim == 1 else np.repeat(m[:, :, None], x.shape[1], axis=2)

    def shifted(self, gamma):
        """``A(t) - gamma I``."""
        n = self.n
        rows = [[self.entries[i][j] if i != j else
                 TimeFunction(f"({self.entries[i][i].expr}) - ({float(gamma)!r})")
                 for j in range(n)] for i in range(n)]
        return LinearSystem(rows)


@dataclass
class SpectralInterval:
    lo: float
    hi: float
    projector_rank_below: int = 0

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("interval with lo > hi")

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "rank": self.projector_rank_below}


@dataclass
class DichotomySpectrum:
    intervals: list
    scan_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.intervals, self.intervals[1:]):
            if not a.lo > b.hi:
                raise ValueError("spectral intervals must be disjoint and descending")

    def __len__(self):
        return len(self.intervals)

    @property
    def approximate(self):
        return bool(self.scan_meta.get("approximate", True))

    def to_dict(self):
        return {"intervals": [iv.to_dict() for iv in self.intervals],
                "grid_step": self.scan_meta.get("grid_step"),
                "window_T": self.scan_meta.get("window_T"),
                "approximate": self.approximate,
                "method": self.scan_meta.get("method")}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def endpoints(self):
        """``[(lo, hi), ...]`` in descending order."""
        return [(iv.lo, iv.hi) for iv in self.intervals]


@dataclass
class EDReport:
    gamma: float
    admits: bool
    K_est: float
    alpha_est: float
    projector_rank: int
    witness: dict


# -- transition matrices ---------------------------------------------------

def transition_matrix(A: LinearSystem, t: float, s: float,
                      cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``Phi(t, s)``; columns are integrated as one batch."""
    n = A.n
    if t == s:
        return np.eye(n)
    traj = integrate_ivp(A, s, t, np.eye(n), _linear_cfg(cfg))
    return traj.states[-1] if t > s else traj.states[0]


def _linear_cfg(cfg):
    # linear growth is expected here; only non-finite values are a failure
    return replace(cfg, blowup_cap=np.inf)


def _transition_marks(A, s, marks, cfg):
    """``Phi(m, s)`` for increasing marks ``m > s``."""
    traj = integrate_ivp(A, s, marks[-1], np.eye(A.n), _linear_cfg(cfg), t_eval=np.asarray(marks))
    return traj.states[1:]


# -- Bohl intervals --------------------------------------------------------

def _window_extremes(cum, dt, min_window, lengths=64):
    """Extremes of window means of a sampled integrand, given its cumulative table.

    Every window of length ``>= 2m`` is an average of windows with lengths in
    ``[m, 2m)``, so scanning that range is enough.
    """
    npts = len(cum)
    kmin = max(1, int(np.ceil(min_window / dt - 1e-9)))
    kmax = min(npts - 1, 2 * kmin)
    ks = np.unique(np.linspace(kmin, kmax, min(lengths, kmax - kmin + 1)).astype(int))
    lo, hi = np.inf, -np.inf
    for k in ks:
        means = (cum[k:] - cum[:-k]) / (k * dt)
        lo = min(lo, float(means.min()))
        hi = max(hi, float(means.max()))
    return lo, hi


def bohl_interval(a, horizon: float, min_window: float, dt: float | None = None,
                  start: float = 0.0) -> SpectralInterval:
    """Range of ``(1/w) ∫_s^{s+w} a`` over windows inside ``[start, start + horizon]``, ``w >= min_window``."""
    if min_window <= 0:
        raise ValueError("min_window must be positive")
    if horizon < 2 * min_window:
        raise HorizonTooShort(f"horizon {horizon} < 2 * min_window {min_window}")
    a = as_time_function(a)
    if a.is_constant:
        c = float(a(0.0))
        return SpectralInterval(c, c)
    if dt is None:
        dt = min(0.05, min_window / 40)
    npts = int(np.ceil(horizon / dt)) + 1
    dt = horizon / (npts - 1)
    tt = start + dt * np.arange(npts)
    cum = cumulative_integral(a(tt), dt)
    lo, hi = _window_extremes(cum, dt, min_window)
    return SpectralInterval(lo, hi)


def _merge(raw, n_total):
    """Merge possibly overlapping ``(lo, hi, dim)`` into disjoint descending intervals."""
    raw = sorted(raw, key=lambda r: r[1], reverse=True)
    merged = []
    for lo, hi, dim in raw:
        if merged and hi >= merged[-1][0]:
            plo, phi, pdim = merged[-1]
            merged[-1] = (min(plo, lo), max(phi, hi), pdim + dim)
        else:
            merged.append((lo, hi, dim))
    out = []
    below = n_total
    for lo, hi, dim in merged:
        below -= dim
        out.append(SpectralInterval(lo, hi, below))
    return out


# -- ED test ---------------------------------------------------------------

def _anchor_rates(A, anchors, T, cfg):
    """Per-anchor growth rates from two windows, and the transient factors.

    ``mu_i = (ln s_i(2T) - ln s_i(T)) / T`` with ``s_i(w)`` the ascending
    singular values of ``Phi(s + w, s)``. The constant prefactor of a
    transient cancels in the difference.
    """
    rates = []
    transient = []
    for s in anchors:
        states = _transition_marks(A, s, [s + T, s + 2 * T], cfg)
        sv1 = np.sort(np.linalg.svd(states[0], compute_uv=False))
        sv2 = np.sort(np.linalg.svd(states[1], compute_uv=False))
        l1 = np.log(np.maximum(sv1, 1e-300))
        l2 = np.log(np.maximum(sv2, 1e-300))
        mu = (l2 - l1) / T
        rates.append(mu)
        transient.append(np.abs(l1 - mu * T))
    return np.array(rates), np.array(transient)


def _ed_from_rates(rates, transient, gamma, alpha0, anchors, T):
    n = rates.shape[1]
    shifted = rates - gamma
    for k in range(n + 1):
        dec = shifted[:, :k]
        grow = shifted[:, k:]
        if np.all(dec <= -alpha0) and np.all(grow >= alpha0):
            margins = np.concatenate([-dec.ravel(), grow.ravel()])
            alpha = float(margins.min())
            K = float(np.exp(transient.max())) if transient.size else 1.0
            return EDReport(gamma, True, max(1.0, K), alpha, k, {})
    # tightest anchor: where the shifted rates come closest to zero
    closeness = np.min(np.abs(shifted), axis=1)
    i = int(np.argmin(closeness))
    return EDReport(gamma, False, float("inf"), 0.0, -1,
                    {"anchor": float(anchors[i]), "window": float(T)})


def admits_ED(A: LinearSystem, gamma: float, T: float = 20.0, anchors=None,
              alpha0: float = 0.02, cfg: IntegratorConfig = DEFAULT_CONFIG) -> EDReport:
    """Finite-horizon test whether ``x' = (A(t) - gamma I) x`` has an exponential dichotomy."""
    if T <= 0:
        raise ValueError("window T must be positive")
    anchors = list(np.arange(0.0, 40.0 + 1e-9, 5.0)) if anchors is None else list(anchors)
    if not anchors:
        raise ValueError("need at least one anchor")
    rates, transient = _anchor_rates(A, anchors, T, cfg)
    return _ed_from_rates(rates, transient, gamma, alpha0, anchors, T)


def _runs(mask):
    out = []
    i = 0
    while i < len(mask):
        if mask[i]:
            j = i
            while j + 1 < len(mask) and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def _scan(A, gamma_grid, T, anchors, alpha0, cfg):
    grid = np.asarray(gamma_grid, dtype=float)
    step = float(grid[1] - grid[0]) if len(grid) > 1 else 0.0
    # a point spectrum sitting between grid nodes must still deny a node
    alpha_eff = max(alpha0, 0.6 * step)
    rates, transient = _anchor_rates(A, anchors, T, cfg)
    reports = [_ed_from_rates(rates, transient, g, alpha_eff, anchors, T) for g in grid]
    denied = np.array([not r.admits for r in reports])
    runs = _runs(denied)
    if len(runs) > A.n:
        raise GridTooCoarse(f"{len(runs)} denied runs for n = {A.n}; refine the grid or window")
    if denied[0] or denied[-1]:
        raise GridTooCoarse("spectrum reaches the end of the shift grid; widen it")
    out = []
    for i, j in sorted(runs, key=lambda r: -r[0]):
        rank = reports[i - 1].projector_rank
        out.append(SpectralInterval(float(grid[i]), float(grid[j]), rank))
    meta = {"grid_step": step, "window_T": T, "anchors": len(anchors), "alpha_eff": alpha_eff,
            "approximate": True, "method": "scan", "uncertainty": step}
    return DichotomySpectrum(out, meta)


def qr_rates(A: LinearSystem, horizon: float, step: float = 1.0, start: float = 0.0,
             cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Local growth rates ``ln |R_ii| / step`` of a discrete QR iteration, shape ``(n, K)``."""
    n = A.n
    K = int(round(horizon / step))
    marks = start + step * np.arange(1, K + 1)
    Q = np.eye(n)
    out = np.zeros((n, K))
    s = start
    for k, t in enumerate(marks):
        Y = integrate_ivp(A, s, t, Q, _linear_cfg(cfg)).states[-1]
        Q, R = np.linalg.qr(Y)
        d = np.diag(R)
        sign = np.sign(d)
        sign[sign == 0] = 1.0
        Q = Q * sign
        out[:, k] = np.log(np.abs(d)) / step
        s = t
    return out


def dichotomy_spectrum(A: LinearSystem, gamma_grid=None, T: float = 20.0, anchors=None,
                       method: str = "auto", horizon: float = 200.0,
                       min_window: float | None = None, alpha0: float = 0.02,
                       qr_step: float = 1.0,
                       cfg: IntegratorConfig = DEFAULT_CONFIG) -> DichotomySpectrum:
    """Estimate ``Sigma(A)`` as disjoint descending intervals.

    ``method`` is ``diag`` (Bohl intervals of the diagonal), ``scan``
    (shift-rate grid) or ``qr``; ``auto`` picks ``diag`` for diagonal systems
    and ``scan`` otherwise.
    """
    if method == "auto":
        method = "diag" if A.structure_tag == "diagonal" else "scan"
    min_window = T if min_window is None else min_window
    if method == "diag":
        if A.structure_tag != "diagonal":
            raise ValueError("the diag method needs a diagonal system")
        raw = [(iv.lo, iv.hi, 1) for iv in (bohl_interval(a, horizon, min_window) for a in A.diag)]
        meta = {"grid_step": None, "window_T": min_window, "approximate": False, "method": "diag",
                "horizon": horizon}
        return DichotomySpectrum(_merge(raw, A.n), meta)
    if method == "scan":
        if gamma_grid is None:
            bound = _growth_bound(A)
            gamma_grid = np.arange(-np.ceil(bound) - 1.0, np.ceil(bound) + 1.0 + 1e-9, 0.05)
        if anchors is None:
            anchors = np.arange(0.0, 40.0 + 1e-9, 5.0)
        return _scan(A, gamma_grid, T, list(anchors), alpha0, cfg)
    if method == "qr":
        if horizon < 2 * min_window:
            raise HorizonTooShort(f"horizon {horizon} < 2 * min_window {min_window}")
        rates = qr_rates(A, horizon, qr_step, cfg=cfg)
        raw = []
        for row in rates:
            cum = np.concatenate([[0.0], np.cumsum(row) * qr_step])
            raw.append((*_window_extremes(cum, qr_step, min_window), 1))
        meta = {"grid_step": qr_step, "window_T": min_window, "approximate": True, "method": "qr",
                "horizon": horizon}
        return DichotomySpectrum(_merge(raw, A.n), meta)
    raise ValueError(f"unknown method {method!r}")


def _growth_bound(A, samples=64, span=40.0):
    ts = np.linspace(0.0, span, samples)
    return max(float(np.linalg.norm(A.matrix(t), 2)) for t in ts)


# -- envelope constant -----------------------------------------------------

def estimate_K_eps(A: LinearSystem, lambda_top_hi: float, lambda_bot_lo: float, eps: float,
                   horizon: float, samples: int = 401, cap: float = 1e6,
                   cfg: IntegratorConfig = DEFAULT_CONFIG) -> float:
    """Smallest ``K >= 1`` with the two-sided growth envelope on sampled pairs in ``[0, horizon]``."""
    if eps <= 0 or horizon <= 0:
        raise ValueError("eps and horizon must be positive")
    tt = np.linspace(0.0, horizon, samples)
    dt = tt[:, None] - tt[None, :]  # t - s
    if A.structure_tag == "diagonal":
        fine = np.linspace(0.0, horizon, 8 * (samples - 1) + 1)
        logs = []
        for a in A.diag:
            if a.is_constant:
                logs.append(float(a(0.0)) * tt)
            else:
                logs.append(cumulative_integral(a(fine), fine[1] - fine[0])[::8])
        L = np.stack(logs)  # ln Lambda_i(t, 0)
        lognorm = np.max(L[:, :, None] - L[:, None, :], axis=0)
    else:
        states = _transition_marks(A, 0.0, tt[1:], cfg)
        phis = np.concatenate([np.eye(A.n)[None], states])
        inv = np.linalg.inv(phis)
        prod = np.einsum("iab,jbc->ijac", phis, inv)  # Phi(t_i, t_j)
        lognorm = np.log(np.linalg.norm(prod, 2, axis=(2, 3)))
    fwd = np.where(dt >= 0, lognorm - (lambda_top_hi + eps) * dt, -np.inf)
    bwd = np.where(dt <= 0, lognorm - (lambda_bot_lo - eps) * dt, -np.inf)
    logK = max(0.0, float(np.max(fwd)), float(np.max(bwd)))
    if logK > np.log(cap):
        raise EnvelopeViolation(f"K(eps) exceeds {cap:g}; spectrum inputs look wrong")
    return float(np.exp(logK))


def spectrum_from_dict(d) -> DichotomySpectrum:
    ivs = [SpectralInterval(float(i["lo"]), float(i["hi"]), int(i.get("rank", 0)))
           for i in d["intervals"]]
    meta = {"grid_step": d.get("grid_step"), "window_T": d.get("window_T"),
            "approximate": d.get("approximate", True), "method": d.get("method")}
    return DichotomySpectrum(ivs, meta)
