"""Linearization remainder ratios shrink linearly with the perturbation size,
and the forced solution returns close to itself at near-returns of the phase."""

import numpy as np

from sdde_lyap import (Phase, Segment, almost_periodicity_diagnostic, get_preset,
                       integrate, smallness_profile)

model = get_preset("m3")
theta = Phase(np.zeros(2))
tr = integrate(model, theta, Segment.constant(1.0, np.zeros(1)), 20.0)
xbar = tr.segment(20.0)
v = Segment.constant(1.0, np.ones(1))
prof = smallness_profile(model, tr.phase(20.0), xbar, v, [1e-1, 1e-2, 1e-3], T=5.0)
for d, g, br in zip(prof["deltas"], prof["g"], prof["bracket"]):
    print(f"delta {d:.0e}: remainder ratio {g:.3e}, bracket ratio {br:.3e}")

long = integrate(model, theta, Segment.constant(1.0, np.zeros(1)), 150.0)
ap = almost_periodicity_diagnostic(long, t_start=20.0, max_period=60.0)
print("almost-period check:", list(zip(ap.deltas, ap.sup_diff)), "consistent:", ap.consistent)
