"""Decouple x1' = -0.5 x1 + 0.7 x2, x2' = -2 x2 and compare h with 0.7 / 1.5."""

import numpy as np

from partlin.conjugacy import h_limit, partial_linearize
from partlin.fields import Poly, PolyField
from partlin.gaps import GapParams
from partlin.verify import conjugacy_residual

l1, l2, b = -0.5, -2.0, 0.7
f = PolyField([Poly([(l1, (1, 0)), (b, (0, 1))], 2), Poly([(l2, (0, 1))], 2)])
chain = partial_linearize(f, [(l1, l1), (l2, l2)], GapParams(0.01, 0.0, 1, 2, 2, 2))
h, bound = h_limit(chain.stages[0].spec, 0.0, np.array([0.05]))
print(f"h = {h[0]:+.9f}, |b|/(l1 - l2) = {b / (l1 - l2):.9f}, tail bound {bound:.1e}")
rep = conjugacy_residual(chain, samples=16, horizon=5.0)
print(f"residual {rep.max_residual:.2e}, round trip {rep.max_roundtrip:.2e}")
