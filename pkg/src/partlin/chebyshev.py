"""Tensor-product Chebyshev interpolants on boxes.

Values are sampled at first-kind Chebyshev points on each axis; the
coefficients come from the discrete cosine sums. Derivatives are exact
derivatives of the interpolant.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C


def cheb_points(n):
    """First-kind points ``cos(pi (j + 1/2) / n)`` on [-1, 1], ascending."""
    j = np.arange(n)
    return np.cos(np.pi * (j + 0.5) / n)[::-1]


def _coef_matrix(n):
    # maps values at ascending first-kind points to Chebyshev coefficients
    x = cheb_points(n)
    m = C.chebvander(x, n - 1).T * (2.0 / n)
    m[0] *= 0.5
    return m


class ChebTensor:
    """Vector-valued interpolant ``f: box in R^k -> R^c``.

    ``coeffs`` has shape ``(c, N_0, ..., N_{k-1})``.
    """

    def __init__(self, lo, hi, coeffs):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != len(self.lo) + 1:
            raise ValueError("coefficient array rank does not match the box dimension")
        if np.any(self.hi <= self.lo):
            raise ValueError("empty box")
        self.max_excess = 0.0

    @property
    def ndim(self):
        return len(self.lo)

    @property
    def degrees(self):
        return self.coeffs.shape[1:]

    @property
    def ncomp(self):
        return self.coeffs.shape[0]

    @staticmethod
    def grid(lo, hi, degrees):
        """Per-axis node coordinates for the given box and node counts."""
        return [0.5 * (a + b) + 0.5 * (b - a) * cheb_points(n)
                for a, b, n in zip(lo, hi, degrees)]

    @classmethod
    def from_values(cls, lo, hi, values):
        """``values`` has shape ``(c, N_0, ..., N_{k-1})`` on :meth:`grid` nodes."""
        coef = np.asarray(values, dtype=float)
        for axis, n in enumerate(coef.shape[1:], start=1):
            coef = np.moveaxis(np.tensordot(_coef_matrix(n), coef, axes=([1], [axis])), 0, axis)
        return cls(lo, hi, coef)

    @classmethod
    def fit(cls, func, lo, hi, degrees):
        """Interpolate ``func(points) -> (c, B)`` where ``points`` has shape ``(k, B)``."""
        axes = cls.grid(lo, hi, degrees)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh])
        vals = np.atleast_2d(func(pts))
        return cls.from_values(lo, hi, vals.reshape((vals.shape[0],) + tuple(degrees)))

    def _scaled(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mid = 0.5 * (self.hi + self.lo)
        half = 0.5 * (self.hi - self.lo)
        z = (pts - mid[:, None]) / half[:, None]
        if z.size:
            self.max_excess = max(self.max_excess, float(np.max(np.abs(z))) - 1.0)
        return z

    def __call__(self, points):
        """Evaluate at ``points`` of shape ``(k, B)``; returns ``(c, B)``."""
        z = self._scaled(points)
        batch = z.shape[1]
        ncomp = self.ncomp
        degs = self.degrees
        v0 = C.chebvander(z[0], degs[0] - 1)  # (B, N0)
        rest = int(np.prod(degs[1:])) if len(degs) > 1 else 1
        flat = np.moveaxis(self.coeffs, 1, 0).reshape(degs[0], ncomp * rest)
        r = (v0 @ flat).reshape((batch, ncomp) + tuple(degs[1:]))
        for axis in range(1, self.ndim):
            vi = C.chebvander(z[axis], degs[axis] - 1)
            shape = (batch, 1, degs[axis]) + (1,) * (self.ndim - axis - 1)
            r = np.sum(r * vi.reshape(shape), axis=2)
        return r.T if r.ndim == 2 else r.reshape(batch, ncomp).T

    def derivative(self, axis):
        """Interpolant of the partial derivative along ``axis``."""
        half = 0.5 * (self.hi[axis] - self.lo[axis])
        d = C.chebder(self.coeffs, axis=axis + 1) / half
        if d.shape[axis + 1] == 0:
            shape = list(self.coeffs.shape)
            shape[axis + 1] = 1
            d = np.zeros(shape)
        pad = self.coeffs.shape[axis + 1] - d.shape[axis + 1]
        widths = [(0, 0)] * d.ndim
        widths[axis + 1] = (0, pad)
        return ChebTensor(self.lo, self.hi, np.pad(d, widths))

    def sup_bound(self):
        """Sum of absolute coefficients per component (bounds the sup norm on the box)."""
        return np.sum(np.abs(self.coeffs.reshape(self.ncomp, -1)), axis=1)

    def tail_size(self):
        """Largest coefficient magnitude on the last slice of any axis (a resolution indicator)."""
        out = 0.0
        for axis in range(1, self.coeffs.ndim):
            last = np.take(self.coeffs, -1, axis=axis)
            out = max(out, float(np.max(np.abs(last))))
        return out

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "degrees": list(self.degrees)}
