"""End-to-end checks: conjugacy residuals, round trips and the three-dimensional example."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .conjugacy import BuildOptions, ConjugacyChain, TruncationPolicy, partial_linearize
from .errors import PartlinError, SpectrumNotSeparated
from .expr import as_time_function
from .fields import Poly, PolyField
from .gaps import GapParams, check_condition
from .ode import DEFAULT_CONFIG, IntegratorConfig, integrate_ivp
from .spectrum import DichotomySpectrum, LinearSystem, dichotomy_spectrum


@dataclass
class ResidualRow:
    x0: list
    worst_t: float
    residual: float
    roundtrip: float


@dataclass
class ResidualReport:
    samples: int
    horizon: float
    max_residual: float
    max_roundtrip: float
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"samples": self.samples, "horizon": self.horizon,
                "max_residual": self.max_residual, "max_roundtrip": self.max_roundtrip,
                "rows": [{"x0": r.x0, "worst_t": r.worst_t, "residual": r.residual,
                          "roundtrip": r.roundtrip} for r in self.rows]}


def ball_samples(n, count, radius, seed):
    """Uniform samples in the closed Euclidean ball, shape ``(n, count)``."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n, count))
    g /= np.linalg.norm(g, axis=0)
    return g * radius * rng.uniform(size=count) ** (1.0 / n)


def conjugacy_residual(chain: ConjugacyChain, samples: int = 16, horizon: float = 10.0,
                       seed: int = 0, t0: float = 0.0, radius: float = 0.1, n_times: int = 51,
                       cfg: IntegratorConfig = DEFAULT_CONFIG, csv_path=None) -> ResidualReport:
    """Compare ``H(t, phi_src(t))`` with the target solution started at ``H(t0, x0)``.

    All samples are integrated as one batch; the round trip is
    ``|H(H^{-1}(x)) - x|`` at the same ``(t, x)`` pairs.
    """
    n = chain.n
    x0 = ball_samples(n, samples, radius, seed)
    ts = np.linspace(t0, t0 + horizon, n_times)
    try:
        src = integrate_ivp(chain.source, t0, t0 + horizon, x0, cfg, t_eval=ts).states
    except PartlinError as exc:
        raise type(exc)(f"source integration over samples {list(range(samples))}: {exc}") from None
    tt = np.repeat(ts, samples)
    flat = src.transpose(1, 0, 2).reshape(n, -1)
    mapped = chain.forward(tt, flat)
    tgt = integrate_ivp(chain.target, t0, t0 + horizon, chain.forward(t0, x0), cfg, t_eval=ts).states
    tgt = tgt.transpose(1, 0, 2).reshape(n, -1)
    res = np.max(np.abs(mapped - tgt), axis=0).reshape(n_times, samples)
    back = chain.forward(tt, chain.inverse(tt, flat))
    rt = np.max(np.abs(back - flat), axis=0).reshape(n_times, samples)
    rows = []
    for j in range(samples):
        k = int(np.argmax(res[:, j]))
        rows.append(ResidualRow(x0[:, j].tolist(), float(ts[k]), float(res[k, j]),
                                float(np.max(rt[:, j]))))
    if csv_path is not None:
        _dump_trajectories(csv_path, ts, src, mapped.reshape(n, n_times, samples),
                           tgt.reshape(n, n_times, samples))
    return ResidualReport(samples, horizon, max(r.residual for r in rows),
                          max(r.roundtrip for r in rows), rows)


def _dump_trajectories(path, ts, src, mapped, tgt):
    n = mapped.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "t"] + [f"src{i + 1}" for i in range(n)]
                   + [f"mapped{i + 1}" for i in range(n)] + [f"target{i + 1}" for i in range(n)])
        for j in range(mapped.shape[2]):
            for k, t in enumerate(ts):
                vals = list(src[k, :, j]) + list(mapped[:, k, j]) + list(tgt[:, k, j])
                w.writerow([j, f"{t:.12g}"] + [f"{v:.12g}" for v in vals])


# -- the three-dimensional example -----------------------------------------

@dataclass
class ExampleSpec:
    alpha: float = 0.01
    sigma: float = 0.01
    xi: str = "sin(t)"
    init_box: float = 0.1
    horizon: float = 10.0
    samples: int = 16
    seed: int = 0
    # budget and numerics
    eps: float = 0.002
    m: int = 3
    k: int = 4
    radius: float = 0.12
    spectrum_horizon: float = 2000.0
    min_window: float = 500.0
    qr_step: float = 2.5


def _drive(spec):
    return f"({spec.alpha!r}) + ({spec.sigma!r})*({spec.xi})"


def example_linear(spec: ExampleSpec) -> LinearSystem:
    c = _drive(spec)
    return LinearSystem([[c, f"-({c})", "0"], [c, f"-1-({c})", "0"], ["0", "0", f"-1-({c})"]])


def example_system(spec: ExampleSpec) -> PolyField:
    """Linear part above minus the quartic terms, rows taken verbatim."""
    c = _drive(spec)
    a = as_time_function(c)
    ma = as_time_function(f"-({c})")
    d = as_time_function(f"-1-({c})")

    def P(terms):
        return Poly(terms, 3)

    return PolyField([
        P([(a, (1, 0, 0)), (ma, (0, 1, 0)), (-1.0, (4, 0, 0)), (2.0, (1, 1, 2)), (-1.0, (0, 1, 2))]),
        P([(a, (1, 0, 0)), (d, (0, 1, 0)), (-1.0, (3, 1, 0)), (2.0, (2, 2, 0)), (-1.0, (0, 1, 3))]),
        P([(d, (0, 0, 1)), (-1.0, (3, 0, 1)), (2.0, (1, 1, 2)), (-1.0, (0, 1, 3))]),
    ])


def nonlinear_jacobian_bound(spec: ExampleSpec, samples: int = 2000):
    """Sampled sup of the spectral norm of the nonlinear part's Jacobian on the working ball."""
    f = example_system(spec)
    A = example_linear(spec)
    x = ball_samples(3, samples, spec.radius, spec.seed + 11)
    t = np.linspace(0.0, 2 * np.pi, samples)
    jac = f.jacobian(t, x) - np.stack([A.matrix(tt) for tt in t], axis=-1)
    return float(max(np.linalg.norm(jac[:, :, i], 2) for i in range(samples)))


def example_spectrum(spec: ExampleSpec, cfg: IntegratorConfig | None = None) -> DichotomySpectrum:
    """QR estimate of the linear part's spectrum; raises if fewer than three intervals remain."""
    cfg = cfg or IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10, max_step=2.0)
    sp = dichotomy_spectrum(example_linear(spec), method="qr", horizon=spec.spectrum_horizon,
                            min_window=spec.min_window, qr_step=spec.qr_step, cfg=cfg)
    if len(sp.intervals) < 3:
        raise SpectrumNotSeparated(
            f"alpha={spec.alpha}, sigma={spec.sigma}: {len(sp.intervals)} interval(s), need 3")
    return sp


def sigma_threshold(spec: ExampleSpec, hi: float = 0.2, iterations: int = 6):
    """Bisect sigma for the largest value that still separates three intervals.

    Returns ``(threshold, history)``; ``history`` lists ``(sigma, separated)``.
    """
    lo = 0.0
    history = []
    probe = ExampleSpec(**{**spec.__dict__, "sigma": hi})
    try:
        example_spectrum(probe)
        history.append((hi, True))
        return hi, history
    except SpectrumNotSeparated:
        history.append((hi, False))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        try:
            example_spectrum(ExampleSpec(**{**spec.__dict__, "sigma": mid}))
            ok = True
            lo = mid
        except SpectrumNotSeparated:
            ok = False
            hi = mid
        history.append((mid, ok))
    return lo, history


def coupling_magnitudes(field_, radius, samples=256, seed=0, t_range=(0.0, 10.0)):
    """Sampled sup of the terms that the partially linear form forbids.

    Reports ``|f_j(t, x) - f_j(t, x_1, 0, 0)|`` for the first row and
    ``|f_j(t, x) - c_j(t, x_1) x_j|``-type departures in the other rows, where
    ``c_j`` is the ``x_j`` coefficient at ``x_j = 0`` estimated by a difference.
    """
    rng = np.random.default_rng(seed)
    n = field_.n
    x = ball_samples(n, samples, radius, seed)
    t = rng.uniform(*t_range, samples)
    f = field_.rhs(t, x)
    out = []
    for j in range(n):
        lead = x.copy()
        lead[j + 1:] = 0.0
        probe = lead.copy()
        probe[j] = 0.0
        base = field_.rhs(t, probe)[j]
        out.append(float(np.max(np.abs(f[j] - field_.rhs(t, lead)[j]))))
        if j > 0:
            # linear in x_j at fixed leading coordinates
            h = 1e-6
            probe[j] = h
            slope = (field_.rhs(t, probe)[j] - base) / h
            out[-1] = max(out[-1], float(np.max(np.abs(field_.rhs(t, lead)[j] - base - slope * lead[j]))))
    return out


def run_example_50(spec: ExampleSpec | None = None, trunc: TruncationPolicy | None = None,
                   opts: BuildOptions | None = None, spectrum: DichotomySpectrum | None = None,
                   bisect: bool = False, csv_path=None, fault: float | None = 0.1):
    """Spectrum, gap report, chain and residuals for the three-dimensional example."""
    spec = spec or ExampleSpec()
    sp = spectrum if spectrum is not None else example_spectrum(spec)
    delta = nonlinear_jacobian_bound(spec)
    budget = GapParams(spec.eps, delta, 1, spec.m, spec.k, 3)
    rep4 = check_condition(4, sp, budget)
    opts = opts or BuildOptions(radius=spec.radius, window=(0.0, spec.horizon), seed=spec.seed)
    chain = partial_linearize(example_system(spec), sp, budget, trunc, opts)
    res = conjugacy_residual(chain, spec.samples, spec.horizon, spec.seed, radius=spec.init_box,
                             csv_path=csv_path)
    report = {
        "spec": dict(spec.__dict__),
        "spectrum": sp.to_dict(),
        "budget": {"eps": spec.eps, "delta": delta, "m": spec.m, "k": spec.k},
        "condition4": rep4.to_dict(),
        "chain": chain.manifest_dict(),
        "residual": res.to_dict(),
        "target_coupling": coupling_magnitudes(chain.target, spec.init_box, seed=spec.seed),
        "source_coupling": coupling_magnitudes(chain.source, spec.init_box, seed=spec.seed),
    }
    if fault is not None:
        worst = 0.0
        for i, st in enumerate(chain.stages):
            if hasattr(st, "htab"):
                r = conjugacy_residual(chain.with_fault(i, fault), spec.samples, spec.horizon,
                                       spec.seed, radius=spec.init_box)
                worst = max(worst, r.max_residual)
        report["fault"] = {"offset": fault, "max_residual": worst}
    if bisect:
        thr, hist = sigma_threshold(spec)
        report["sigma_threshold"] = {"value": thr, "history": hist}
    return report, chain


def report_json(report, digits=12):
    return json.dumps(_round(report, digits), indent=2)


def _round(obj, digits):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: _round(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist(), digits)
    if isinstance(obj, (np.floating, np.integer)):
        return _round(obj.item(), digits)
    return obj
