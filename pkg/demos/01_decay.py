"""Pure decay: the upper exponent of x' = -x is -1 in both norms."""

import numpy as np

from sdde_lyap import Phase, Segment, estimate_exponent, get_preset, integrate

model = get_preset("m0")
theta = Phase(np.zeros(1))
tr = integrate(model, theta, Segment.constant(1.0, np.ones(1)), 2.0)
point = (tr.phase(2.0), tr.segment(2.0))

for norm in ("C", "W"):
    rep = estimate_exponent(model, [point], T=50.0, ensemble=16, norm=norm, seed=0)
    print(f"norm {norm}: lambda_C = {rep.lambda_C:+.6f}  lambda_W = {rep.lambda_W:+.6f}")
