"""Dichotomy spectra of a few linear systems by the three estimators."""

from partlin.spectrum import LinearSystem, dichotomy_spectrum

cases = [
    ("diag(-2+sin t, 0.5)", LinearSystem.diagonal(["-2+sin(t)", "0.5"]), {}),
    ("[[1, 5], [0, -1]]", LinearSystem([["1", "5"], ["0", "-1"]]), {"method": "scan"}),
    ("rotation plus decay", LinearSystem([["-0.3", "1"], ["-1", "-0.3"]]),
     {"method": "qr", "horizon": 400.0, "min_window": 100.0}),
]
for name, A, kw in cases:
    sp = dichotomy_spectrum(A, **kw)
    ivs = ", ".join(f"[{iv.lo:.4f}, {iv.hi:.4f}]" for iv in sp.intervals)
    print(f"{name:24s} {sp.scan_meta['method']:5s} {ivs}")
