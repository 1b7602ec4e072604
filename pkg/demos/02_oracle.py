"""Linear delay equation x' = -b x(t-1): the estimated exponent against the
rightmost characteristic root, below, at and above the Hopf value b = pi/2."""

import math

import numpy as np

from sdde_lyap import (Phase, Segment, characteristic_root_oracle, estimate_exponent,
                       get_preset)

for b in (1 / math.e, math.pi / 2, 2.0):
    model = get_preset("m1", params={"b": b})
    zero = (Phase(np.zeros(1)), Segment.zeros(1.0, 1))
    rep = estimate_exponent(model, [zero], T=200.0, ensemble=16, seed=0)
    root = characteristic_root_oracle(0.0, b, 1.0)
    print(f"b = {b:.4f}: estimate {rep.lambda_C:+.5f}, root {root.real:+.5f} "
          f"(imag {root.imag:.4f})")
