"""Stability probe around the zero solution of the state-dependent model:
perturbations decay at about the rate given by the exponent."""

import numpy as np

from sdde_lyap import Phase, Segment, estimate_exponent, get_preset, stability_probe

model = get_preset("m2")
zero = [(Phase(np.zeros(1)), Segment.zeros(1.0, 1))]
lam = estimate_exponent(model, zero, T=50.0, ensemble=8, seed=0).lambda_C
cert = stability_probe(model, zero, T=10.0, lambda_hat=lam, seed=0)
print(f"lambda_hat = {lam:+.4f}")
print(f"fitted decay: C {cert.beta_fit:.4f} (R^2 {cert.r2_C:.4f}), "
      f"W {cert.beta_fit_W:.4f} (R^2 {cert.r2_W:.4f})")
print("verdict:", cert.verdict)
